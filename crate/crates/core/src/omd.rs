//! Greedy step: per-state matrix games against a frozen value function, solved
//! by two-player optimistic mirror descent with mixing and adaptive steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{backup_matrix, MarkovGame, TabularPolicy, ValueVector};
use crate::matrix::PayoffMatrix;

/// Slack allowed on `V_prev` beyond `[0, 1/(1-gamma)]`.
pub const VALUE_RANGE_SLACK: f64 = 1e-9;

/// `A_s(a, b) = r(s, a, b) + gamma sum_s' P(s'|s,a,b) V_prev(s')` for every state.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyMatrixSet {
    matrices: Vec<PayoffMatrix>,
    v_prev: ValueVector,
    gamma: f64,
}

impl GreedyMatrixSet {
    /// Wraps explicit per-state matrices (all square of one size).
    pub fn from_matrices(matrices: Vec<PayoffMatrix>, gamma: f64) -> Result<Self> {
        let n = matrices
            .first()
            .ok_or_else(|| Error::Dimension("empty matrix set".into()))?
            .rows();
        if matrices.iter().any(|m| m.rows() != n || m.cols() != n) {
            return Err(Error::Dimension("matrix set must be square and uniform".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidConfig(format!("gamma {gamma} not in [0, 1)")));
        }
        let ns = matrices.len();
        Ok(Self {
            matrices,
            v_prev: ValueVector::zeros(ns),
            gamma,
        })
    }

    pub fn matrices(&self) -> &[PayoffMatrix] {
        &self.matrices
    }

    pub fn matrix(&self, s: usize) -> &PayoffMatrix {
        &self.matrices[s]
    }

    pub fn n_states(&self) -> usize {
        self.matrices.len()
    }

    pub fn n_actions(&self) -> usize {
        self.matrices[0].rows()
    }

    pub fn v_prev(&self) -> &ValueVector {
        &self.v_prev
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

pub fn build_greedy_matrices(game: &MarkovGame, v_prev: &ValueVector) -> Result<GreedyMatrixSet> {
    if v_prev.values.len() != game.n_states() {
        return Err(Error::Dimension(format!(
            "V_prev has {} entries, game has {} states",
            v_prev.values.len(),
            game.n_states()
        )));
    }
    let hi = game.value_bound() + VALUE_RANGE_SLACK;
    if let Some((s, v)) = v_prev
        .values
        .iter()
        .enumerate()
        .find(|(_, v)| !(**v >= -VALUE_RANGE_SLACK && **v <= hi))
    {
        return Err(Error::Range(format!(
            "V_prev({s}) = {v} outside [0, {}]",
            game.value_bound()
        )));
    }
    Ok(GreedyMatrixSet {
        matrices: (0..game.n_states())
            .map(|s| backup_matrix(game, &v_prev.values, s))
            .collect(),
        v_prev: v_prev.clone(),
        gamma: game.gamma(),
    })
}

/// Step-size schedule shared by both players.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    /// Payoff-variation adaptive steps, capped at `1 / (1 + 10/(1-gamma)^2)`.
    Adaptive,
    /// The same step in every round.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmdConfig {
    pub t_prime: usize,
    pub step: StepRule,
    /// Uniform mixing weight; `None` means `1 / T'^2`.
    pub beta: Option<f64>,
    /// Record a trace row every `trace_stride` rounds (0 disables).
    pub trace_stride: usize,
}

impl OmdConfig {
    pub fn new(t_prime: usize) -> Self {
        Self {
            t_prime,
            step: StepRule::Adaptive,
            beta: None,
            trace_stride: 0,
        }
    }

    pub fn beta(&self) -> f64 {
        self.beta
            .unwrap_or_else(|| 1.0 / (self.t_prime as f64 * self.t_prime as f64))
    }

    fn validate(&self) -> Result<()> {
        if self.t_prime == 0 {
            return Err(Error::InvalidConfig("T' must be at least 1".into()));
        }
        let beta = self.beta();
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidConfig(format!("mixing weight {beta} not in [0, 1]")));
        }
        if let StepRule::Fixed(eta) = self.step {
            if !(eta >= 0.0 && eta.is_finite()) {
                return Err(Error::InvalidConfig(format!("fixed step {eta} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Upper cap on the adaptive step, `1 / (1 + 10 / (1 - gamma)^2)`.
pub fn step_cap(gamma: f64) -> f64 {
    1.0 / (1.0 + 10.0 / ((1.0 - gamma) * (1.0 - gamma)))
}

/// `eta_t` from the opponent payoff history `p_0, p_1, ...` (`p_i` observed
/// in round `i`, `p_0` the payoff of the initial opponent strategy).
///
/// `eta_t = min(log(|A| T'^2) / (sqrt(S_{t-1}) + sqrt(S_{t-2})), cap)` with
/// `S_j = sum_{i=1..j} ||p_i - p_{i-1}||_inf^2`. Only `p_0..p_{t-1}` are read.
pub fn adaptive_step(history: &[Vec<f64>], t: usize, gamma: f64, t_prime: usize) -> Result<f64> {
    if t == 0 {
        return Err(Error::InvalidConfig("adaptive step needs t >= 1".into()));
    }
    let n = history.first().map_or(1, Vec::len);
    let sq = |i: usize| -> f64 {
        match (history.get(i), history.get(i - 1)) {
            (Some(p), Some(q)) => {
                let d = p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                d * d
            }
            _ => 0.0,
        }
    };
    let s1: f64 = (1..t).map(sq).sum();
    let s2: f64 = (1..t.saturating_sub(1)).map(sq).sum();
    Ok(step_from_sums(s1, s2, n, gamma, t_prime))
}

fn step_from_sums(s1: f64, s2: f64, n: usize, gamma: f64, t_prime: usize) -> f64 {
    let cap = step_cap(gamma);
    let denom = s1.sqrt() + s2.sqrt();
    if denom == 0.0 {
        return cap;
    }
    let tp = t_prime as f64;
    ((n as f64 * tp * tp).ln() / denom).min(cap)
}

/// One player's OMD state at one state of the game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerOmd {
    /// Primary sequence: the strategy played next.
    pub primary: Vec<f64>,
    /// Secondary sequence after mixing.
    pub secondary: Vec<f64>,
    /// Payoff vector observed last round (`p_{t-1}`).
    last_payoff: Vec<f64>,
    /// `S_{t-1}` and `S_{t-2}`.
    sq_sum: f64,
    sq_sum_prev: f64,
    /// Step used in the most recent round.
    pub eta: f64,
    sum_primary: Vec<f64>,
    cum_payoff: Vec<f64>,
}

impl PlayerOmd {
    fn new(initial_payoff: Vec<f64>) -> Self {
        let n = initial_payoff.len();
        let u = vec![1.0 / n as f64; n];
        Self {
            primary: u.clone(),
            secondary: u,
            last_payoff: initial_payoff,
            sq_sum: 0.0,
            sq_sum_prev: 0.0,
            eta: 0.0,
            sum_primary: vec![0.0; n],
            cum_payoff: vec![0.0; n],
        }
    }

    /// `sign = -1` for the minimizing player, `+1` for the maximizer.
    fn update(&mut self, payoff: &[f64], sign: f64, beta: f64, steps: (f64, f64)) {
        let (eta_t, eta_next) = steps;
        let n = payoff.len() as f64;
        // secondary: y_t ∝ y'_{t-1} exp(sign eta_t p_t), then mix
        let mut sec = exp_tilt(&self.secondary, payoff, sign * eta_t);
        sec.iter_mut().for_each(|w| *w = (1.0 - beta) * *w + beta / n);
        self.primary = exp_tilt(&sec, payoff, sign * eta_next);
        self.secondary = sec;
        self.eta = eta_t;
    }

    fn steps(&self, payoff: &[f64], rule: StepRule, gamma: f64, t_prime: usize) -> (f64, f64, f64) {
        let d = payoff
            .iter()
            .zip(&self.last_payoff)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let new_sum = self.sq_sum + d * d;
        match rule {
            StepRule::Fixed(eta) => (eta, eta, new_sum),
            StepRule::Adaptive => {
                let n = payoff.len();
                (
                    step_from_sums(self.sq_sum, self.sq_sum_prev, n, gamma, t_prime),
                    step_from_sums(new_sum, self.sq_sum, n, gamma, t_prime),
                    new_sum,
                )
            }
        }
    }

    fn record(&mut self, payoff: &[f64], new_sum: f64) {
        self.sum_primary
            .iter_mut()
            .zip(&self.primary)
            .for_each(|(s, p)| *s += p);
        self.cum_payoff
            .iter_mut()
            .zip(payoff)
            .for_each(|(c, p)| *c += p);
        self.sq_sum_prev = self.sq_sum;
        self.sq_sum = new_sum;
        self.last_payoff.copy_from_slice(payoff);
    }

    /// Smallest secondary-sequence entry.
    pub fn min_secondary(&self) -> f64 {
        self.secondary.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `out ∝ base * exp(scale * payoff)`, computed in log space with a max shift.
fn exp_tilt(base: &[f64], payoff: &[f64], scale: f64) -> Vec<f64> {
    let logs: Vec<f64> = base
        .iter()
        .zip(payoff)
        .map(|(b, p)| {
            if *b > 0.0 {
                b.ln() + scale * p
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logs.iter().map(|l| (l - shift).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= total);
    out
}

/// Per-state OMD state for both players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateOmd {
    /// Max player (`x` / `y'`).
    pub max: PlayerOmd,
    /// Min player (`f` / `g'`).
    pub min: PlayerOmd,
    cum_phi: f64,
}

/// `OmdState` across every state of the game, after `t` completed rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmdState {
    pub states: Vec<StateOmd>,
    pub t: usize,
    pub beta: f64,
    pub config: OmdConfig,
    gamma: f64,
}

impl OmdState {
    pub fn new(matrices: &GreedyMatrixSet, config: &OmdConfig) -> Result<Self> {
        config.validate()?;
        let n = matrices.n_actions();
        let uniform = vec![1.0 / n as f64; n];
        let states = matrices
            .matrices()
            .iter()
            .map(|a| StateOmd {
                max: PlayerOmd::new(a.col_mix(&uniform)),
                min: PlayerOmd::new(a.row_mix(&uniform)),
                cum_phi: 0.0,
            })
            .collect();
        Ok(Self {
            states,
            t: 0,
            beta: config.beta(),
            config: config.clone(),
            gamma: matrices.gamma(),
        })
    }

    /// Uniform averages of the primary sequences over completed rounds.
    pub fn averages(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let t = self.t.max(1) as f64;
        let avg = |p: &PlayerOmd| {
            if self.t == 0 {
                p.primary.clone()
            } else {
                p.sum_primary.iter().map(|s| s / t).collect::<Vec<f64>>()
            }
        };
        (
            self.states.iter().map(|s| avg(&s.max)).collect(),
            self.states.iter().map(|s| avg(&s.min)).collect(),
        )
    }

    /// `(regret_x, regret_f)` at state `s` over completed rounds.
    pub fn regrets(&self, s: usize) -> (f64, f64) {
        let st = &self.states[s];
        let best_x = st.max.cum_payoff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let best_f = st.min.cum_payoff.iter().copied().fold(f64::INFINITY, f64::min);
        (best_x - st.cum_phi, st.cum_phi - best_f)
    }
}

/// Plays round `t = state.t + 1` at every state.
pub fn omd_round(state: &mut OmdState, matrices: &GreedyMatrixSet) -> Result<()> {
    if state.states.len() != matrices.n_states() {
        return Err(Error::Dimension("OMD state does not match the matrix set".into()));
    }
    if state.t >= state.config.t_prime {
        return Err(Error::InvalidConfig(format!(
            "round {} exceeds T' = {}",
            state.t + 1,
            state.config.t_prime
        )));
    }
    let (beta, rule, gamma, tp) = (state.beta, state.config.step, state.gamma, state.config.t_prime);
    for (st, a) in state.states.iter_mut().zip(matrices.matrices()) {
        let u = a.col_mix(&st.min.primary); // A f_t
        let l = a.row_mix(&st.max.primary); // A^T x_t
        let phi: f64 = st.max.primary.iter().zip(&u).map(|(x, v)| x * v).sum();
        st.cum_phi += phi;
        let (ex, ex_next, sum_x) = st.max.steps(&u, rule, gamma, tp);
        let (ef, ef_next, sum_f) = st.min.steps(&l, rule, gamma, tp);
        st.max.record(&u, sum_x);
        st.min.record(&l, sum_f);
        st.max.update(&u, 1.0, beta, (ex, ex_next));
        st.min.update(&l, -1.0, beta, (ef, ef_next));
    }
    state.t += 1;
    Ok(())
}

/// Final per-state diagnostics of a greedy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateDiagnostics {
    pub state: usize,
    /// `max_a (A f̄)_a - min_b (x̄^T A)_b`.
    pub gap: f64,
    pub regret_x: f64,
    pub regret_f: f64,
    pub eta_x: f64,
    pub eta_f: f64,
    pub min_secondary: f64,
}

/// Diagnostic CSV row `(state, t, gap, regret_x, regret_f, eta_x, eta_f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmdTraceRow {
    pub state: usize,
    pub t: usize,
    pub gap: f64,
    pub regret_x: f64,
    pub regret_f: f64,
    pub eta_x: f64,
    pub eta_f: f64,
}

pub const OMD_TRACE_HEADER: &str = "state,t,gap,regret_x,regret_f,eta_x,eta_f";

impl OmdTraceRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.state, self.t, self.gap, self.regret_x, self.regret_f, self.eta_x, self.eta_f
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyDiagnostics {
    pub per_state: Vec<StateDiagnostics>,
    pub trace: Vec<OmdTraceRow>,
}

impl GreedyDiagnostics {
    pub fn max_gap(&self) -> f64 {
        self.per_state.iter().map(|d| d.gap).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutput {
    pub x_bar: TabularPolicy,
    pub f_bar: TabularPolicy,
    pub diagnostics: GreedyDiagnostics,
}

fn diagnostics_at(state: &OmdState, matrices: &GreedyMatrixSet, s: usize, x: &[f64], f: &[f64]) -> (f64, f64, f64) {
    let gap = matrices.matrix(s).duality_gap(x, f);
    let (rx, rf) = state.regrets(s);
    (gap, rx, rf)
}

/// Runs `T'` OMD rounds on an explicit matrix set.
pub fn run_omd(matrices: &GreedyMatrixSet, config: &OmdConfig) -> Result<GreedyOutput> {
    let mut state = OmdState::new(matrices, config)?;
    let mut trace = Vec::new();
    for _ in 0..config.t_prime {
        omd_round(&mut state, matrices)?;
        if config.trace_stride > 0 && (state.t % config.trace_stride == 0 || state.t == config.t_prime) {
            let (xs, fs) = state.averages();
            for s in 0..matrices.n_states() {
                let (gap, regret_x, regret_f) = diagnostics_at(&state, matrices, s, &xs[s], &fs[s]);
                trace.push(OmdTraceRow {
                    state: s,
                    t: state.t,
                    gap,
                    regret_x,
                    regret_f,
                    eta_x: state.states[s].max.eta,
                    eta_f: state.states[s].min.eta,
                });
            }
        }
    }
    let (xs, fs) = state.averages();
    let per_state = (0..matrices.n_states())
        .map(|s| {
            let (gap, regret_x, regret_f) = diagnostics_at(&state, matrices, s, &xs[s], &fs[s]);
            let st = &state.states[s];
            StateDiagnostics {
                state: s,
                gap,
                regret_x,
                regret_f,
                eta_x: st.max.eta,
                eta_f: st.min.eta,
                min_secondary: st.max.min_secondary().min(st.min.min_secondary()),
            }
        })
        .collect();
    let (ns, na) = (matrices.n_states(), matrices.n_actions());
    Ok(GreedyOutput {
        x_bar: TabularPolicy::from_weights(ns, na, xs.concat())?,
        f_bar: TabularPolicy::from_weights(ns, na, fs.concat())?,
        diagnostics: GreedyDiagnostics { per_state, trace },
    })
}

/// Greedy step against `V_prev` with adaptive steps and `beta = 1/T'^2`.
pub fn run_greedy(game: &MarkovGame, v_prev: &ValueVector, t_prime: usize) -> Result<GreedyOutput> {
    run_greedy_with(game, v_prev, &OmdConfig::new(t_prime))
}

pub fn run_greedy_with(game: &MarkovGame, v_prev: &ValueVector, config: &OmdConfig) -> Result<GreedyOutput> {
    run_omd(&build_greedy_matrices(game, v_prev)?, config)
}
