use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use zsnpg::coefficients::{concentrability, default_depth, DEFAULT_REPORT_EPS};
use zsnpg::game::{GameFile, MarkovGame, StateDist};
use zsnpg::harness::{generate_game, run_experiment, write_csv, ExperimentSpec, GameKind};
use zsnpg::online::{run_online_npg, FeatureMap, OnlineConfig, SamplingOracle, ONLINE_TRACE_HEADER};
use zsnpg::oracle::{shapley_value_iteration, DEFAULT_ORACLE_TOL};
use zsnpg::population::{run_population_npg, PopulationConfig, OUTER_TRACE_HEADER};
use zsnpg::Result;

#[derive(Parser)]
#[command(name = "zsnpg", version, about = "NPG solvers and exact oracles for zero-sum Markov games")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Algo {
    Population,
    Online,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment spec (JSON); exits 1 on violated thresholds, 2 on failed replications.
    Run { spec: PathBuf },
    /// Run one solver on a game file and write its trace.
    Solve {
        game: PathBuf,
        #[arg(long, value_enum, default_value = "population")]
        algo: Algo,
        #[arg(long = "K", default_value_t = 5)]
        k: usize,
        #[arg(long = "T", default_value_t = 1000)]
        t: usize,
        #[arg(long = "Tprime", default_value_t = 1000)]
        t_prime: usize,
        #[arg(long = "N", default_value_t = 1000)]
        n: usize,
        #[arg(long = "Nprime", default_value_t = 1000)]
        n_prime: usize,
        /// Projection radius W (online); defaults to 1/(1-gamma).
        #[arg(long = "W")]
        radius: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        eta_prime: Option<f64>,
        /// Entropy weight (population only).
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for trace.csv and policy.json.
        #[arg(long, default_value = "zsnpg-out")]
        out: PathBuf,
    },
    /// Solve a game exactly by Shapley value iteration and print the certificate.
    Oracle {
        game: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ORACLE_TOL)]
        tol: f64,
    },
    /// Print the concentrability report of a game.
    Coeff {
        game: PathBuf,
        /// Comma-separated weights (normalized); uniform if omitted.
        #[arg(long)]
        rho: Option<String>,
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long = "J")]
        depth: Option<usize>,
        /// `l,k,d` triples for C^{l,k,d}; repeatable.
        #[arg(long = "lkd", value_parser = parse_triple)]
        lkd: Vec<(usize, usize, usize)>,
    },
    /// Write a generated game file.
    Generate {
        #[command(subcommand)]
        kind: GenKind,
        #[arg(long, default_value_t = 0, global = true)]
        seed: u64,
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GenKind {
    Random {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        gamma: f64,
    },
    Chain {
        #[arg(long)]
        states: usize,
        #[arg(long)]
        gamma: f64,
    },
    /// Rows separated by `;`, entries by `,`: "1,0;0,1".
    Single {
        #[arg(long)]
        matrix: String,
        #[arg(long)]
        gamma: f64,
    },
}

fn parse_triple(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse().map_err(|e| format!("{x}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [l, k, d] => Ok((l, k, d)),
        _ => Err("expected l,k,d".into()),
    }
}

fn parse_weights(s: &str) -> Result<StateDist> {
    let w = s
        .split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| zsnpg::Error::InvalidDistribution(format!("{x}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    StateDist::normalized(w)
}

fn dist_or_uniform(arg: &Option<String>, game: &MarkovGame) -> Result<StateDist> {
    match arg {
        Some(s) => parse_weights(s),
        None => Ok(StateDist::uniform(game.n_states())),
    }
}

fn parse_matrix(s: &str) -> Result<Vec<Vec<f64>>> {
    s.split(';')
        .map(|row| {
            row.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|e| zsnpg::Error::InvalidConfig(format!("matrix entry {x}: {e}")))
                })
                .collect()
        })
        .collect()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Run { spec } => {
            let spec = ExperimentSpec::load(&spec)?;
            let outcome = run_experiment(&spec)?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            Ok(outcome.exit_code as u8)
        }
        Cmd::Solve {
            game,
            algo,
            k,
            t,
            t_prime,
            n,
            n_prime,
            radius,
            eta,
            eta_prime,
            tau,
            seed,
            out,
        } => {
            let game = GameFile::load(&game)?;
            fs::create_dir_all(&out)?;
            let trace = out.join("trace.csv");
            match algo {
                Algo::Population => {
                    let mut cfg = PopulationConfig::new(&game, k, t, t_prime);
                    cfg.eta = eta;
                    cfg.tau = tau;
                    let res = run_population_npg(&game, &cfg)?;
                    write_csv(&trace, OUTER_TRACE_HEADER, res.trace.rows.iter().map(|r| r.csv()))?;
                    write_json(
                        &out.join("policy.json"),
                        &json!({"pi1": res.pi1, "pi2": res.pi2}),
                    )?;
                    println!("final exploitability {:.6e}", res.final_exploitability());
                }
                Algo::Online => {
                    let mut cfg = OnlineConfig::tabular(&game, k, t, t_prime, n, n_prime);
                    if let Some(w) = radius {
                        cfg.sgd.radius = w;
                    }
                    cfg.sgd.eta = eta;
                    cfg.sgd.eta_prime = eta_prime;
                    cfg.features = Arc::new(FeatureMap::tabular(game.n_states(), game.n_actions()));
                    let mut oracle = SamplingOracle::with_sigma(&game, &cfg.sigma, seed)?;
                    let res = run_online_npg(&mut oracle, &cfg)?;
                    write_csv(&trace, ONLINE_TRACE_HEADER, res.trace.iter().map(|r| r.csv()))?;
                    write_json(
                        &out.join("policy.json"),
                        &json!({"pi1": res.pi1, "pi2_params": res.pi2.params(), "samples": oracle.calls()}),
                    )?;
                    println!("final exploitability {:.6e}", res.final_exploitability());
                }
            }
            Ok(0)
        }
        Cmd::Oracle { game, tol } => {
            let game = GameFile::load(&game)?;
            let cert = shapley_value_iteration(&game, tol)?;
            let report = json!({
                "v_star": cert.v_star.values,
                "pi1_star": cert.pi1_star,
                "pi2_star": cert.pi2_star,
                "residual": cert.residual,
                "iterations": cert.iterations,
                "tol": cert.tol,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Cmd::Coeff {
            game,
            rho,
            sigma,
            depth,
            lkd,
        } => {
            let game = GameFile::load(&game)?;
            let rho = dist_or_uniform(&rho, &game)?;
            let sigma = dist_or_uniform(&sigma, &game)?;
            let depth = depth.unwrap_or_else(|| default_depth(game.gamma(), DEFAULT_REPORT_EPS));
            let report = concentrability(&game, &rho, &sigma, depth, &lkd)?;
            println!("{}", report.to_json());
            Ok(0)
        }
        Cmd::Generate { kind, seed, out } => {
            let kind = match kind {
                GenKind::Random { states, actions, gamma } => GameKind::Random {
                    n_states: states,
                    n_actions: actions,
                    gamma,
                },
                GenKind::Chain { states, gamma } => GameKind::MatchingPenniesChain {
                    n_states: states,
                    gamma,
                },
                GenKind::Single { matrix, gamma } => GameKind::SingleState {
                    matrix: parse_matrix(&matrix)?,
                    gamma,
                },
            };
            let game = generate_game(&kind, seed)?;
            match out {
                Some(path) => GameFile::save(&game, path)?,
                None => println!("{}", GameFile::from_game(&game).to_json()),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
