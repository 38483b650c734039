//! Experiment specs, seeded batch execution, trace files and summaries.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generators::{generate_game, GameKind};
use crate::error::{Error, Result};
use crate::game::{GameFile, MarkovGame, StateDist};
use crate::online::{run_online_npg_with, FeatureMap, OnlineConfig, SamplingOracle, SgdConfig, ONLINE_TRACE_HEADER};
use crate::oracle::{ExploitabilityMeter, DEFAULT_ORACLE_TOL};
use crate::population::{ls_slope, run_population_npg_with, PopulationConfig, OUTER_TRACE_HEADER};

/// First line of every CSV the harness writes.
pub const CSV_SCHEMA_LINE: &str = "#schema=v1";

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "ZSNPG_THREADS";

/// Where the game comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GameSource {
    File {
        file: PathBuf,
    },
    /// A missing `seed` gives each replication its own game.
    Generator {
        generator: GameKind,
        #[serde(default)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Population,
    PopulationEntropy,
    Online,
}

/// Algorithm parameters; fields an algorithm does not use are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "Tprime")]
    pub t_prime: usize,
    #[serde(default)]
    pub eta: Option<f64>,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default, rename = "N")]
    pub n: Option<usize>,
    #[serde(default, rename = "Nprime")]
    pub n_prime: Option<usize>,
    #[serde(default, rename = "W")]
    pub radius: Option<f64>,
    #[serde(default)]
    pub eta_prime: Option<f64>,
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    #[serde(default)]
    pub rho: Option<Vec<f64>>,
    #[serde(default)]
    pub trace_stride: Option<usize>,
}

/// Default entropy weight for `population-entropy`.
pub const DEFAULT_TAU: f64 = 0.1;

impl Params {
    pub fn new(k: usize, t: usize, t_prime: usize) -> Self {
        Self {
            k,
            t,
            t_prime,
            eta: None,
            tau: None,
            n: None,
            n_prime: None,
            radius: None,
            eta_prime: None,
            sigma: None,
            rho: None,
            trace_stride: None,
        }
    }

    fn dists(&self, game: &MarkovGame) -> Result<(StateDist, StateDist)> {
        let pick = |w: &Option<Vec<f64>>| match w {
            Some(w) => StateDist::normalized(w.clone()),
            None => Ok(StateDist::uniform(game.n_states())),
        };
        Ok((pick(&self.sigma)?, pick(&self.rho)?))
    }

    pub fn population_config(&self, game: &MarkovGame, entropy: bool) -> Result<PopulationConfig> {
        let mut cfg = PopulationConfig::new(game, self.k, self.t, self.t_prime);
        cfg.eta = self.eta;
        cfg.tau = if entropy { self.tau.unwrap_or(DEFAULT_TAU) } else { 0.0 };
        (cfg.sigma, cfg.rho) = self.dists(game)?;
        cfg.validate(game)?;
        Ok(cfg)
    }

    pub fn online_config(&self, game: &MarkovGame) -> Result<OnlineConfig> {
        let (Some(n), Some(n_prime)) = (self.n, self.n_prime) else {
            return Err(Error::InvalidConfig("online runs need N and Nprime".into()));
        };
        let mut sgd = SgdConfig::new(game.gamma(), n, n_prime);
        if let Some(w) = self.radius {
            sgd.radius = w;
        }
        sgd.eta = self.eta;
        sgd.eta_prime = self.eta_prime;
        let (sigma, rho) = self.dists(game)?;
        let cfg = OnlineConfig {
            k: self.k,
            t: self.t,
            t_prime: self.t_prime,
            sgd,
            features: Arc::new(FeatureMap::tabular(game.n_states(), game.n_actions())),
            sigma,
            rho,
            trace_stride: self.trace_stride.unwrap_or(1),
        };
        cfg.validate(game)?;
        Ok(cfg)
    }
}

/// Parameter varied across a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    T,
    Tprime,
    N,
    K,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<usize>,
}

/// Summary metric checked by the thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Exploitability,
    IterSubopt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Fitted log-log slope of `slope_metric` must lie in this range.
    #[serde(default)]
    pub slope_range: Option<(f64, f64)>,
    #[serde(default = "default_metric")]
    pub slope_metric: Metric,
    /// Every point's median final exploitability must stay at or below this.
    #[serde(default)]
    pub max_median_exploitability: Option<f64>,
}

fn default_metric() -> Metric {
    Metric::IterSubopt
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub game: GameSource,
    pub algorithm: Algorithm,
    pub params: Params,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    #[serde(default)]
    pub thresholds: Option<Thresholds>,
}

impl ExperimentSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref())?;
        let mut spec: Self = serde_json::from_str(&text)?;
        // relative paths are taken from the spec's directory
        let base = path.as_ref().parent().unwrap_or(Path::new(""));
        if spec.output_dir.is_relative() {
            spec.output_dir = base.join(&spec.output_dir);
        }
        if let GameSource::File { file } = &mut spec.game {
            if file.is_relative() {
                *file = base.join(&*file);
            }
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if let Some(sw) = &self.sweep {
            if sw.values.is_empty() || sw.values.contains(&0) {
                return Err(Error::InvalidConfig("sweep values must be positive and non-empty".into()));
            }
            if sw.param == SweepParam::N && self.algorithm != Algorithm::Online {
                return Err(Error::InvalidConfig("an N sweep needs the online algorithm".into()));
            }
        }
        let game = self.game_for(self.seed)?;
        for params in self.points() {
            match self.algorithm {
                Algorithm::Population => params.population_config(&game, false).map(drop)?,
                Algorithm::PopulationEntropy => params.population_config(&game, true).map(drop)?,
                Algorithm::Online => params.online_config(&game).map(drop)?,
            }
        }
        Ok(())
    }

    pub fn game_for(&self, rep_seed: u64) -> Result<MarkovGame> {
        match &self.game {
            GameSource::File { file } => GameFile::load(file),
            GameSource::Generator { generator, seed } => generate_game(generator, seed.unwrap_or(rep_seed)),
        }
    }

    /// One parameter set per sweep value (or just the base parameters).
    pub fn points(&self) -> Vec<Params> {
        match &self.sweep {
            None => vec![self.params.clone()],
            Some(sw) => sw
                .values
                .iter()
                .map(|&v| {
                    let mut p = self.params.clone();
                    match sw.param {
                        SweepParam::T => p.t = v,
                        SweepParam::Tprime => p.t_prime = v,
                        SweepParam::K => p.k = v,
                        SweepParam::N => p.n = Some(v),
                    }
                    p
                })
                .collect(),
        }
    }

    fn rep_seed(&self, rep: usize) -> u64 {
        self.seed.wrapping_add(rep as u64)
    }
}

/// Final numbers of one replication at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub point: usize,
    pub replication: usize,
    pub seed: u64,
    pub exploitability: f64,
    pub iter_subopt: f64,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let x = p * (v.len() - 1) as f64;
            let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
            v[lo] + (x - lo as f64) * (v[hi] - v[lo])
        };
        let (q1, median, q3) = (q(0.25), q(0.5), q(0.75));
        Self {
            median,
            q1,
            q3,
            iqr: q3 - q1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub value: Option<usize>,
    pub exploitability: Stat,
    pub iter_subopt: Stat,
    pub mean_exploitability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub metric: Metric,
    pub param: SweepParam,
    /// Least-squares slope of `log median` on `log value`.
    pub slope: f64,
    /// Points left out as burn-in (the first 10%).
    pub burn_in: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub point: usize,
    pub replication: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub algorithm: Algorithm,
    pub replications: usize,
    pub points: Vec<PointSummary>,
    pub fits: Vec<Fit>,
    pub failures: Vec<Failure>,
    pub violations: Vec<String>,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub summary: Summary,
    pub results: Vec<RepResult>,
    pub exit_code: i32,
}

/// Worker count from the environment, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|n| *n > 0)
}

/// Runs every (point, replication) pair in parallel, writes one trace CSV per
/// pair, then `summary.json`. Exit code 0 on success, 1 if a threshold is
/// violated, 2 if any replication failed.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    fs::create_dir_all(&spec.output_dir)?;
    let points = spec.points();
    let jobs: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..spec.replications).map(move |r| (p, r)))
        .collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads_from_env() {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<std::result::Result<RepResult, Failure>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(p, r)| {
                run_one(spec, &points[p], p, r).map_err(|e| Failure {
                    point: p,
                    replication: r,
                    error: e.to_string(),
                })
            })
            .collect()
    });

    let mut results = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => results.push(r),
            Err(f) => failures.push(f),
        }
    }
    let summary = summarize(spec, &points, &results, failures);
    fs::write(
        spec.output_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    let exit_code = if !summary.failures.is_empty() {
        2
    } else if !summary.passed {
        1
    } else {
        0
    };
    Ok(ExperimentOutcome {
        summary,
        results,
        exit_code,
    })
}

fn trace_name(spec: &ExperimentSpec, point: usize, rep: usize) -> String {
    match &spec.sweep {
        None => format!("rep{rep:03}.csv"),
        Some(sw) => format!("{:?}{}_rep{rep:03}.csv", sw.param, sw.values[point]).to_lowercase(),
    }
}

/// Writes `#schema=v1`, the header, then the rows.
pub fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut text = format!("{CSV_SCHEMA_LINE}\n{header}\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn run_one(spec: &ExperimentSpec, params: &Params, point: usize, rep: usize) -> Result<RepResult> {
    let seed = spec.rep_seed(rep);
    let game = spec.game_for(seed)?;
    let meter = ExploitabilityMeter::new(&game, DEFAULT_ORACLE_TOL)?;
    let name = trace_name(spec, point, rep);
    let path = spec.output_dir.join(&name);
    let (exploitability, iter_subopt) = match spec.algorithm {
        Algorithm::Population | Algorithm::PopulationEntropy => {
            let cfg = params.population_config(&game, spec.algorithm == Algorithm::PopulationEntropy)?;
            let out = run_population_npg_with(&game, &cfg, &meter)?;
            write_csv(&path, OUTER_TRACE_HEADER, out.trace.rows.iter().map(|r| r.csv()))?;
            let last = out.trace.rows.last().expect("K >= 1");
            (last.exploitability_rho, last.iter_subopt_sigma)
        }
        Algorithm::Online => {
            let cfg = params.online_config(&game)?;
            let mut oracle = SamplingOracle::with_sigma(&game, &cfg.sigma, seed)?;
            let out = run_online_npg_with(&mut oracle, &cfg, &meter)?;
            write_csv(&path, ONLINE_TRACE_HEADER, out.trace.iter().map(|r| r.csv()))?;
            let last = out.trace.last().expect("T >= 1");
            (out.final_exploitability(), last.subopt_sigma)
        }
    };
    Ok(RepResult {
        point,
        replication: rep,
        seed,
        exploitability,
        iter_subopt,
        trace_file: name,
    })
}

/// Log-log least-squares slope after dropping the first 10% of points;
/// non-positive medians are left out (they have no logarithm).
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> (f64, usize) {
    let burn = xs.len() / 10;
    let (lx, ly): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .skip(burn)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .unzip();
    let slope = if lx.len() >= 2 { ls_slope(&lx, &ly) } else { f64::NAN };
    (slope, burn)
}

fn summarize(spec: &ExperimentSpec, points: &[Params], results: &[RepResult], failures: Vec<Failure>) -> Summary {
    let values: Vec<Option<usize>> = match &spec.sweep {
        None => vec![None],
        Some(sw) => sw.values.iter().copied().map(Some).collect(),
    };
    let summaries: Vec<PointSummary> = (0..points.len())
        .map(|p| {
            let mine: Vec<&RepResult> = results.iter().filter(|r| r.point == p).collect();
            let ex: Vec<f64> = mine.iter().map(|r| r.exploitability).collect();
            let sub: Vec<f64> = mine.iter().map(|r| r.iter_subopt).collect();
            PointSummary {
                value: values[p],
                exploitability: Stat::of(&ex),
                iter_subopt: Stat::of(&sub),
                mean_exploitability: ex.iter().sum::<f64>() / ex.len().max(1) as f64,
            }
        })
        .collect();

    let mut fits = Vec::new();
    if let Some(sw) = &spec.sweep {
        let xs: Vec<f64> = sw.values.iter().map(|v| *v as f64).collect();
        for metric in [Metric::Exploitability, Metric::IterSubopt] {
            let ys: Vec<f64> = summaries
                .iter()
                .map(|s| match metric {
                    Metric::Exploitability => s.exploitability.median,
                    Metric::IterSubopt => s.iter_subopt.median,
                })
                .collect();
            let (slope, burn_in) = fit_slope(&xs, &ys);
            fits.push(Fit {
                metric,
                param: sw.param,
                slope,
                burn_in,
            });
        }
    }

    let mut violations = Vec::new();
    if let Some(th) = &spec.thresholds {
        if let Some((lo, hi)) = th.slope_range {
            match fits.iter().find(|f| f.metric == th.slope_metric) {
                Some(f) if f.slope >= lo && f.slope <= hi => {}
                Some(f) => violations.push(format!(
                    "{:?} slope {:.4} outside [{lo}, {hi}]",
                    th.slope_metric, f.slope
                )),
                None => violations.push("slope threshold needs a sweep".into()),
            }
        }
        if let Some(cap) = th.max_median_exploitability {
            for (p, s) in summaries.iter().enumerate() {
                if !(s.exploitability.median <= cap) {
                    violations.push(format!(
                        "point {p}: median exploitability {:.4e} > {cap:e}",
                        s.exploitability.median
                    ));
                }
            }
        }
    }
    let passed = violations.is_empty() && failures.is_empty();
    Summary {
        name: spec.name.clone(),
        algorithm: spec.algorithm,
        replications: spec.replications,
        points: summaries,
        fits,
        failures,
        violations,
        passed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles() {
        let s = Stat::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((s.q1, s.median, s.q3, s.iqr), (2.0, 3.0, 4.0, 2.0));
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [10.0, 20.0, 40.0, 80.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 / x).collect();
        let (slope, burn) = fit_slope(&xs, &ys);
        assert!((slope + 1.0).abs() < 1e-12);
        assert_eq!(burn, 0);
    }

    #[test]
    fn spec_parses() {
        let text = r#"{
            "name": "smoke",
            "game": {"generator": {"kind": "random", "n_states": 2, "n_actions": 2, "gamma": 0.9}, "seed": 7},
            "algorithm": "population-entropy",
            "params": {"K": 1, "T": 5, "Tprime": 5, "tau": 0.2},
            "replications": 2,
            "output_dir": "out",
            "sweep": {"param": "T", "values": [5, 10]},
            "thresholds": {"slope_range": [-2.0, 0.0]}
        }"#;
        let spec: ExperimentSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.points().len(), 2);
        assert_eq!(spec.points()[1].t, 10);
        spec.validate().unwrap();
    }
}
