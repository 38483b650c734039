//! Population (exact-gradient) two-player NPG: greedy OMD step for the max
//! player, then softmax NPG for the min player's best response, optionally
//! entropy regularized.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    evaluate_regularized_value, evaluate_value, fisher_matrix, policy_gradient_min,
    q_and_advantage, regularized_q, visitation, GradientForm, MarkovGame, StateDist,
    TabularPolicy, ValueVector,
};
use crate::omd::{run_greedy_with, OmdConfig};
use crate::oracle::{best_response_min, ExploitabilityMeter, DEFAULT_ORACLE_TOL};

/// States with visitation at or below this are excluded from the Fisher check.
pub const FISHER_VISITATION_FLOOR: f64 = 1e-8;

/// Default NPG step `(1 - gamma)^2 log|A|`, the smallest step the rate bound covers.
pub fn default_eta(gamma: f64, n_actions: usize) -> f64 {
    let log_a = (n_actions as f64).ln();
    // a single action makes every update a no-op; keep the step positive
    (1.0 - gamma).powi(2) * if log_a > 0.0 { log_a } else { 1.0 }
}

fn require_logits(pi2: &TabularPolicy) -> Result<&[f64]> {
    pi2.logits().ok_or_else(|| {
        Error::InvalidPolicy("min player policy must carry softmax logits".into())
    })
}

/// One closed-form NPG step:
/// `pi2'(b|s) ∝ pi2(b|s) exp(-(eta/(1-gamma)) sum_a pi1(a|s) A(s,a,b))`.
pub fn npg_inner_update(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
    eta: f64,
) -> Result<TabularPolicy> {
    let theta = require_logits(pi2)?;
    let q = q_and_advantage(game, pi1, pi2)?;
    let scale = eta / (1.0 - game.gamma());
    let na = game.n_actions();
    let mut next = theta.to_vec();
    for s in 0..game.n_states() {
        for (b, w) in q.weighted_advantage(pi1, s).into_iter().enumerate() {
            next[s * na + b] -= scale * w;
        }
    }
    TabularPolicy::from_logits(game.n_states(), na, next)
}

/// Entropy-regularized step:
/// `pi2'(b|s) ∝ pi2(b|s)^(1 - eta tau/(1-gamma)) exp(-(eta/(1-gamma)) sum_a pi1 Q_tau)`.
pub fn npg_regularized_update(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
    eta: f64,
    tau: f64,
) -> Result<TabularPolicy> {
    check_regularized_step(game.gamma(), eta, tau)?;
    let theta = require_logits(pi2)?;
    let q = regularized_q(game, pi1, pi2, tau)?;
    let scale = eta / (1.0 - game.gamma());
    let keep = 1.0 - eta * tau / (1.0 - game.gamma());
    let na = game.n_actions();
    let mut next: Vec<f64> = theta.iter().map(|t| keep * t).collect();
    for s in 0..game.n_states() {
        for (b, w) in q.weighted_q(pi1, s).into_iter().enumerate() {
            next[s * na + b] -= scale * w;
        }
    }
    TabularPolicy::from_logits(game.n_states(), na, next)
}

fn check_regularized_step(gamma: f64, eta: f64, tau: f64) -> Result<()> {
    if eta * tau / (1.0 - gamma) > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "eta tau / (1 - gamma) = {} exceeds 1",
            eta * tau / (1.0 - gamma)
        )));
    }
    Ok(())
}

/// Agreement between the closed-form step and `theta - eta F^+ grad V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherCheck {
    /// Max probability difference over well-visited states.
    pub max_deviation: f64,
    /// States whose visitation under `sigma` is at most the floor.
    pub excluded_states: Vec<usize>,
}

pub fn fisher_npg_update_check(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
    eta: f64,
    sigma: &StateDist,
) -> Result<FisherCheck> {
    let theta = require_logits(pi2)?;
    let closed = npg_inner_update(game, pi1, pi2, eta)?;
    let grad = policy_gradient_min(game, pi1, pi2, sigma, GradientForm::Advantage)?;
    let f = fisher_matrix(game, pi1, pi2, sigma)?;
    let scale = f.amax().max(1.0);
    let pinv = f
        .pseudo_inverse(1e-13 * scale)
        .map_err(|e| Error::Numerics(format!("Fisher pseudo-inverse: {e}")))?;
    let step = pinv * DVector::from_column_slice(&grad);
    let next: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, d)| t - eta * d).collect();
    let fisher = TabularPolicy::from_logits(game.n_states(), game.n_actions(), next)?;
    let d = visitation(game, pi1, pi2, sigma)?;
    let mut excluded = Vec::new();
    let mut dev: f64 = 0.0;
    for s in 0..game.n_states() {
        if d.as_slice()[s] <= FISHER_VISITATION_FLOOR {
            excluded.push(s);
            continue;
        }
        for (p, q) in closed.row(s).iter().zip(fisher.row(s)) {
            dev = dev.max((p - q).abs());
        }
    }
    Ok(FisherCheck {
        max_deviation: dev,
        excluded_states: excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationConfig {
    pub t: usize,
    pub eta: f64,
    pub tau: f64,
    pub sigma: StateDist,
    /// Iteration counts at which the exact suboptimality is also recorded.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
    /// Keep every `pi2^t`, `t = 0..=T`.
    #[serde(default)]
    pub keep_trajectory: bool,
}

impl IterationConfig {
    pub fn new(t: usize, eta: f64, tau: f64, sigma: StateDist) -> Self {
        Self {
            t,
            eta,
            tau,
            sigma,
            checkpoints: Vec::new(),
            keep_trajectory: false,
        }
    }

    fn validate(&self, game: &MarkovGame) -> Result<()> {
        if self.t == 0 {
            return Err(Error::InvalidConfig("T must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta {} must be positive", self.eta)));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidConfig(format!("tau {} must be >= 0", self.tau)));
        }
        game.check_dist(&self.sigma, "sigma")?;
        check_regularized_step(game.gamma(), self.eta, self.tau)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationOutput {
    pub pi2: TabularPolicy,
    /// Unregularized `V^{pi1, pi2^T}`.
    pub v_k: ValueVector,
    /// `V^{pi1, pi2^T}(sigma) - inf_{pi2} V^{pi1, pi2}(sigma)`.
    pub suboptimality: f64,
    pub checkpoint_subopt: Vec<(usize, f64)>,
    pub best_response_value: ValueVector,
    pub trajectory: Vec<TabularPolicy>,
}

/// `T` NPG steps for the min player from uniform logits.
pub fn iteration_step(game: &MarkovGame, pi1: &TabularPolicy, cfg: &IterationConfig) -> Result<IterationOutput> {
    cfg.validate(game)?;
    let br = best_response_min(game, pi1)?;
    let br_sigma = br.value.at(&cfg.sigma);
    let mut pi2 = TabularPolicy::uniform(game.n_states(), game.n_actions());
    let mut trajectory = Vec::new();
    let mut checkpoint_subopt = Vec::new();
    if cfg.keep_trajectory {
        trajectory.push(pi2.clone());
    }
    for t in 1..=cfg.t {
        pi2 = if cfg.tau > 0.0 {
            npg_regularized_update(game, pi1, &pi2, cfg.eta, cfg.tau)?
        } else {
            npg_inner_update(game, pi1, &pi2, cfg.eta)?
        };
        if cfg.keep_trajectory {
            trajectory.push(pi2.clone());
        }
        if cfg.checkpoints.contains(&t) {
            let v = evaluate_value(game, pi1, &pi2)?;
            checkpoint_subopt.push((t, v.at(&cfg.sigma) - br_sigma));
        }
    }
    let v_k = evaluate_value(game, pi1, &pi2)?;
    Ok(IterationOutput {
        suboptimality: v_k.at(&cfg.sigma) - br_sigma,
        pi2,
        v_k,
        checkpoint_subopt,
        best_response_value: br.value,
        trajectory,
    })
}

/// Outer-loop configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub k: usize,
    pub t: usize,
    pub t_prime: usize,
    /// `None` selects [`default_eta`].
    pub eta: Option<f64>,
    pub tau: f64,
    pub sigma: StateDist,
    pub rho: StateDist,
    #[serde(default)]
    pub record_timing: bool,
}

impl PopulationConfig {
    pub fn new(game: &MarkovGame, k: usize, t: usize, t_prime: usize) -> Self {
        Self {
            k,
            t,
            t_prime,
            eta: None,
            tau: 0.0,
            sigma: StateDist::uniform(game.n_states()),
            rho: StateDist::uniform(game.n_states()),
            record_timing: false,
        }
    }

    pub fn eta_for(&self, game: &MarkovGame) -> f64 {
        self.eta
            .unwrap_or_else(|| default_eta(game.gamma(), game.n_actions()))
    }

    pub fn validate(&self, game: &MarkovGame) -> Result<()> {
        if self.k == 0 || self.t == 0 || self.t_prime == 0 {
            return Err(Error::InvalidConfig("K, T and T' must be at least 1".into()));
        }
        game.check_dist(&self.sigma, "sigma")?;
        game.check_dist(&self.rho, "rho")?;
        if !self.sigma.is_strictly_positive() {
            return Err(Error::InvalidConfig("sigma must be strictly positive".into()));
        }
        IterationConfig::new(self.t, self.eta_for(game), self.tau, self.sigma.clone()).validate(game)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRow {
    pub k: usize,
    pub exploitability_rho: f64,
    pub greedy_gap_max: f64,
    pub iter_subopt_sigma: f64,
    pub wallclock_ms: u64,
    pub v_k: ValueVector,
}

pub const OUTER_TRACE_HEADER: &str = "k,exploitability_rho,greedy_gap_max,iter_subopt_sigma,wallclock_ms";

impl OuterRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{}",
            self.k, self.exploitability_rho, self.greedy_gap_max, self.iter_subopt_sigma, self.wallclock_ms
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterTrace {
    pub rows: Vec<OuterRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationOutput {
    pub pi1: TabularPolicy,
    pub pi2: TabularPolicy,
    pub trace: OuterTrace,
}

impl PopulationOutput {
    pub fn final_exploitability(&self) -> f64 {
        self.trace.rows.last().map_or(f64::NAN, |r| r.exploitability_rho)
    }
}

pub fn run_population_npg(game: &MarkovGame, cfg: &PopulationConfig) -> Result<PopulationOutput> {
    let meter = ExploitabilityMeter::new(game, DEFAULT_ORACLE_TOL)?;
    run_population_npg_with(game, cfg, &meter)
}

/// Same as [`run_population_npg`] with a precomputed `V*`.
pub fn run_population_npg_with(
    game: &MarkovGame,
    cfg: &PopulationConfig,
    meter: &ExploitabilityMeter,
) -> Result<PopulationOutput> {
    cfg.validate(game)?;
    let eta = cfg.eta_for(game);
    let mut v = ValueVector::zeros(game.n_states());
    let mut rows = Vec::with_capacity(cfg.k);
    let mut pi1 = TabularPolicy::uniform(game.n_states(), game.n_actions());
    let mut pi2 = pi1.clone();
    for k in 1..=cfg.k {
        let start = Instant::now();
        let greedy = run_greedy_with(game, &v, &OmdConfig::new(cfg.t_prime))?;
        pi1 = greedy.x_bar;
        let iter = iteration_step(game, &pi1, &IterationConfig::new(cfg.t, eta, cfg.tau, cfg.sigma.clone()))?;
        pi2 = iter.pi2;
        v = iter.v_k;
        let exploitability_rho = meter.exploitability(&pi1, &cfg.rho)?;
        let wallclock_ms = if cfg.record_timing {
            start.elapsed().as_millis() as u64
        } else {
            0
        };
        rows.push(OuterRow {
            k,
            exploitability_rho,
            greedy_gap_max: greedy.diagnostics.max_gap(),
            iter_subopt_sigma: iter.suboptimality,
            wallclock_ms,
            v_k: v.clone(),
        });
    }
    Ok(PopulationOutput {
        pi1,
        pi2,
        trace: OuterTrace { rows },
    })
}

/// Optimal entropy-regularized response `pi_tau*` of the min player and `V_tau*`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftBestResponse {
    pub pi2: TabularPolicy,
    pub value: ValueVector,
}

/// Soft value iteration `V(s) = -tau log sum_b exp(-qbar(s,b)/tau)` followed
/// by an exact evaluation of the induced Boltzmann policy.
pub fn soft_best_response(game: &MarkovGame, pi1: &TabularPolicy, tau: f64) -> Result<SoftBestResponse> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("soft best response needs tau > 0".into()));
    }
    let (ns, na) = (game.n_states(), game.n_actions());
    let mut v = vec![0.0; ns];
    let boltzmann = |v: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut next = vec![0.0; ns];
        let mut probs = vec![0.0; ns * na];
        for s in 0..ns {
            let q = crate::game::backup_matrix(game, v, s).row_mix(pi1.row(s));
            let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
            let w: Vec<f64> = q.iter().map(|x| (-(x - lo) / tau).exp()).collect();
            let z: f64 = w.iter().sum();
            next[s] = lo - tau * z.ln();
            for b in 0..na {
                probs[s * na + b] = w[b] / z;
            }
        }
        (next, probs)
    };
    let floor = 4.0 * f64::EPSILON * (game.value_bound() + tau * (na as f64).ln() * game.value_bound());
    let cap = if game.gamma() == 0.0 {
        1
    } else {
        ((floor / game.value_bound()).ln() / game.gamma().ln()).ceil() as usize + 100
    };
    for _ in 0..cap {
        let (next, _) = boltzmann(&v);
        let res = crate::game::sup_norm_diff(&next, &v);
        v = next;
        if res <= floor {
            break;
        }
    }
    let (_, probs) = boltzmann(&v);
    let pi2 = TabularPolicy::from_weights(ns, na, probs)?;
    let value = evaluate_regularized_value(game, pi1, &pi2, tau)?;
    Ok(SoftBestResponse { pi2, value })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sandwich {
    /// `V^{pi1, pi_tau*}(sigma)`.
    pub v_soft_policy: f64,
    /// `V^{pi1, pi2*}(sigma)`.
    pub v_best_response: f64,
    /// `V_tau^{pi1, pi2*}(sigma)`.
    pub v_tau_best_response: f64,
    /// `V_tau*(sigma)`.
    pub v_tau_star: f64,
    /// `tau log|A| / (1 - gamma)`.
    pub width_bound: f64,
}

impl Sandwich {
    /// `V^{pi1, pi_tau*}(sigma) - V_tau*(sigma)`.
    pub fn width(&self) -> f64 {
        self.v_soft_policy - self.v_tau_star
    }

    /// Every link of the chain, with slack `tol`.
    pub fn holds(&self, tol: f64) -> bool {
        self.v_soft_policy >= self.v_best_response - tol
            && self.v_best_response >= self.v_tau_best_response - tol
            && self.v_tau_best_response >= self.v_tau_star - tol
            && self.v_tau_star >= self.v_soft_policy - self.width_bound - tol
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedReport {
    /// `V_tau^t(sigma) - V_tau^{t+1}(sigma)` for `t = 0..T-1`.
    pub improvements: Vec<f64>,
    /// `V_tau^t(sigma) - V_tau*(sigma)` for `t = 0..=T`.
    pub gaps: Vec<f64>,
    /// Least-squares slope of `log gap` over `t in [T/2, T]` (positive gaps only).
    pub log_gap_slope: f64,
    pub sandwich: Sandwich,
}

impl RegularizedReport {
    pub fn min_improvement(&self) -> f64 {
        self.improvements.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn regularized_diagnostics(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    trajectory: &[TabularPolicy],
    tau: f64,
    sigma: &StateDist,
) -> Result<RegularizedReport> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("regularized diagnostics need tau > 0".into()));
    }
    if trajectory.is_empty() {
        return Err(Error::InvalidConfig("empty trajectory".into()));
    }
    let soft = soft_best_response(game, pi1, tau)?;
    let v_tau_star = soft.value.at(sigma);
    let values: Vec<f64> = trajectory
        .iter()
        .map(|p| evaluate_regularized_value(game, pi1, p, tau).map(|v| v.at(sigma)))
        .collect::<Result<_>>()?;
    let improvements = values.windows(2).map(|w| w[0] - w[1]).collect();
    let gaps: Vec<f64> = values.iter().map(|v| v - v_tau_star).collect();
    let t_total = gaps.len() - 1;
    let (xs, ys): (Vec<f64>, Vec<f64>) = (t_total / 2..=t_total)
        .filter(|&t| gaps[t] > 0.0)
        .map(|t| (t as f64, gaps[t].ln()))
        .unzip();
    let log_gap_slope = if xs.len() >= 2 { ls_slope(&xs, &ys) } else { f64::NAN };

    let br = best_response_min(game, pi1)?;
    let sandwich = Sandwich {
        v_soft_policy: evaluate_value(game, pi1, &soft.pi2)?.at(sigma),
        v_best_response: br.value.at(sigma),
        v_tau_best_response: evaluate_regularized_value(game, pi1, &br.pi2, tau)?.at(sigma),
        v_tau_star,
        width_bound: tau * (game.n_actions() as f64).ln() / (1.0 - game.gamma()),
    };
    Ok(RegularizedReport {
        improvements,
        gaps,
        log_gap_slope,
        sandwich,
    })
}
