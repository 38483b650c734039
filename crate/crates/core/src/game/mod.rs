//! Tabular two-player zero-sum Markov games.
//!
//! The max player picks rows `a`, the min player picks columns `b`, and both
//! share one action set. Rewards live in `[0, 1]` and `gamma < 1`, so every
//! value function is bounded by `1 / (1 - gamma)`.

mod eval;
mod file;

pub use eval::{
    backup_matrix, bellman_apply, evaluate_regularized_value, evaluate_value, fisher_matrix, joint_kernel,
    policy_entropy, policy_gradient_min, q_and_advantage, regularized_q, visitation,
    BellmanMode, GradientForm, BELLMAN_SOLVER_TOL, SOLVE_RESIDUAL_TOL,
};
pub use file::{GameFile, GAME_FILE_LOAD_TOL};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on probability rows (transition rows, policy rows, distributions).
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Full tabular description `(S, A, P, r, gamma)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovGame {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    // r[s][a][b] flattened as ((s * A) + a) * A + b
    reward: Vec<f64>,
    // P[s][a][b][s'] flattened as (((s * A) + a) * A + b) * S + s'
    transition: Vec<f64>,
}

impl MarkovGame {
    /// Builds a game from flat row-major tensors, validating every invariant.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward: Vec<f64>,
        transition: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidGame(
                "n_states and n_actions must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidGame(format!("gamma {gamma} not in [0, 1)")));
        }
        let n_joint = n_states * n_actions * n_actions;
        if reward.len() != n_joint {
            return Err(Error::Dimension(format!(
                "reward has {} entries, expected {n_joint}",
                reward.len()
            )));
        }
        if transition.len() != n_joint * n_states {
            return Err(Error::Dimension(format!(
                "transition has {} entries, expected {}",
                transition.len(),
                n_joint * n_states
            )));
        }
        let game = Self {
            n_states,
            n_actions,
            gamma,
            reward,
            transition,
        };
        game.check_entries(SIMPLEX_TOL)?;
        Ok(game)
    }

    /// Builds a game from nested `[s][a][b]` rewards and `[s][a][b][s']` transitions.
    pub fn from_nested(
        gamma: f64,
        reward: &[Vec<Vec<f64>>],
        transition: &[Vec<Vec<Vec<f64>>>],
    ) -> Result<Self> {
        let n_states = reward.len();
        let n_actions = reward.first().map_or(0, Vec::len);
        let mut r = Vec::with_capacity(n_states * n_actions * n_actions);
        let mut p = Vec::with_capacity(n_states * n_states * n_actions * n_actions);
        if transition.len() != n_states {
            return Err(Error::Dimension(format!(
                "transition has {} states, reward has {n_states}",
                transition.len()
            )));
        }
        for s in 0..n_states {
            if reward[s].len() != n_actions || transition[s].len() != n_actions {
                return Err(Error::Dimension(format!("state {s}: ragged action axis")));
            }
            for a in 0..n_actions {
                if reward[s][a].len() != n_actions || transition[s][a].len() != n_actions {
                    return Err(Error::Dimension(format!("state {s}, action {a}: ragged axis")));
                }
                r.extend_from_slice(&reward[s][a]);
                for b in 0..n_actions {
                    if transition[s][a][b].len() != n_states {
                        return Err(Error::Dimension(format!(
                            "transition[{s}][{a}][{b}] has {} entries, expected {n_states}",
                            transition[s][a][b].len()
                        )));
                    }
                    p.extend_from_slice(&transition[s][a][b]);
                }
            }
        }
        Self::new(n_states, n_actions, gamma, r, p)
    }

    fn check_entries(&self, tol: f64) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for b in 0..self.n_actions {
                    let r = self.reward(s, a, b);
                    if !(0.0..=1.0).contains(&r) {
                        return Err(Error::InvalidGame(format!(
                            "reward[{s}][{a}][{b}] = {r} outside [0, 1]"
                        )));
                    }
                    let row = self.next_dist(s, a, b);
                    if let Some((i, p)) = row.iter().enumerate().find(|(_, p)| !(**p >= 0.0)) {
                        return Err(Error::InvalidGame(format!(
                            "transition[{s}][{a}][{b}][{i}] = {p} is negative"
                        )));
                    }
                    let total: f64 = row.iter().sum();
                    if (total - 1.0).abs() > tol {
                        return Err(Error::InvalidGame(format!(
                            "transition[{s}][{a}][{b}] sums to {total}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Upper end of the plain value range, `1 / (1 - gamma)`.
    pub fn value_bound(&self) -> f64 {
        1.0 / (1.0 - self.gamma)
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize, b: usize) -> f64 {
        self.reward[(s * self.n_actions + a) * self.n_actions + b]
    }

    /// `P(. | s, a, b)` as a slice over next states.
    #[inline]
    pub fn next_dist(&self, s: usize, a: usize, b: usize) -> &[f64] {
        let base = ((s * self.n_actions + a) * self.n_actions + b) * self.n_states;
        &self.transition[base..base + self.n_states]
    }

    /// `sum_{s'} P(s' | s, a, b) v(s')`.
    #[inline]
    pub fn expected_next(&self, s: usize, a: usize, b: usize, v: &[f64]) -> f64 {
        self.next_dist(s, a, b)
            .iter()
            .zip(v)
            .map(|(p, x)| p * x)
            .sum()
    }

    pub fn rewards_flat(&self) -> &[f64] {
        &self.reward
    }

    pub fn transitions_flat(&self) -> &[f64] {
        &self.transition
    }

    /// Nested `[s][a][b]` reward tensor.
    pub fn reward_nested(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| (0..self.n_actions).map(|b| self.reward(s, a, b)).collect())
                    .collect()
            })
            .collect()
    }

    /// Nested `[s][a][b][s']` transition tensor.
    pub fn transition_nested(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| {
                        (0..self.n_actions)
                            .map(|b| self.next_dist(s, a, b).to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    pub(crate) fn check_policy(&self, pi: &TabularPolicy, who: &str) -> Result<()> {
        if pi.n_states() != self.n_states || pi.n_actions() != self.n_actions {
            return Err(Error::Dimension(format!(
                "{who} policy is {}x{}, game is {}x{}",
                pi.n_states(),
                pi.n_actions(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }

    pub(crate) fn check_dist(&self, d: &StateDist, who: &str) -> Result<()> {
        if d.len() != self.n_states {
            return Err(Error::Dimension(format!(
                "{who} has {} states, game has {}",
                d.len(),
                self.n_states
            )));
        }
        Ok(())
    }

    pub(crate) fn check_values(&self, v: &[f64], who: &str) -> Result<()> {
        if v.len() != self.n_states {
            return Err(Error::Dimension(format!(
                "{who} has {} entries, game has {} states",
                v.len(),
                self.n_states
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Range(format!("{who} has non-finite entries")));
        }
        Ok(())
    }
}

/// Per-state action distributions, optionally carrying softmax logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    logits: Option<Vec<f64>>,
}

impl TabularPolicy {
    /// Uniform softmax policy (all logits zero).
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
            logits: Some(vec![0.0; n_states * n_actions]),
        }
    }

    /// Distribution-only policy from row-major probabilities.
    pub fn from_probs(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions || n_actions == 0 {
            return Err(Error::Dimension(format!(
                "policy needs {} probabilities, got {}",
                n_states * n_actions,
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0)) {
                return Err(Error::InvalidPolicy(format!("state {s}: negative probability")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidPolicy(format!("state {s}: row sums to {total}")));
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
            logits: None,
        })
    }

    /// Like [`TabularPolicy::from_probs`] but renormalizes rows first; used
    /// for averaged iterates that carry rounding drift.
    pub fn from_weights(n_states: usize, n_actions: usize, mut weights: Vec<f64>) -> Result<Self> {
        if weights.len() != n_states * n_actions || n_actions == 0 {
            return Err(Error::Dimension("policy weights have wrong length".into()));
        }
        for row in weights.chunks_mut(n_actions) {
            let total: f64 = row.iter().sum();
            if !(total > 0.0) || row.iter().any(|w| !(*w >= 0.0)) {
                return Err(Error::InvalidPolicy("row weights must be non-negative".into()));
            }
            row.iter_mut().for_each(|w| *w /= total);
        }
        Self::from_probs(n_states, n_actions, weights)
    }

    /// Softmax policy; logits are shifted to per-state mean zero.
    pub fn from_logits(n_states: usize, n_actions: usize, mut logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions || n_actions == 0 {
            return Err(Error::Dimension("logits have wrong length".into()));
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPolicy("non-finite logit".into()));
        }
        let mut probs = vec![0.0; logits.len()];
        for (row, out) in logits.chunks_mut(n_actions).zip(probs.chunks_mut(n_actions)) {
            let mean = row.iter().sum::<f64>() / n_actions as f64;
            row.iter_mut().for_each(|x| *x -= mean);
            softmax_into(row, out);
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
            logits: Some(logits),
        })
    }

    /// Deterministic policy playing `actions[s]` at state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::Dimension(format!("action {a} out of range at state {s}")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Self::from_probs(actions.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> Option<&[f64]> {
        self.logits.as_deref()
    }

    /// Drops the logits, keeping only the distribution.
    pub fn without_logits(mut self) -> Self {
        self.logits = None;
        self
    }

    /// Max absolute probability difference to another policy of equal shape.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Numerically stable softmax of `logits` written into `out`.
pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = (x - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Probability distribution over states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct StateDist(Vec<f64>);

impl StateDist {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidDistribution("empty distribution".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidDistribution("negative or NaN weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Ok(Self(weights))
    }

    /// Normalizes non-negative weights to a distribution.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidDistribution(
                "weights must be non-negative with positive mass".into(),
            ));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self(weights))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, s: usize) -> Self {
        let mut w = vec![0.0; n];
        w[s] = 1.0;
        Self(w)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// `sum_s d(s) v(s)`.
    pub fn expect(&self, v: &[f64]) -> f64 {
        self.0.iter().zip(v).map(|(d, x)| d * x).sum()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|w| *w > 0.0)
    }
}

impl TryFrom<Vec<f64>> for StateDist {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<StateDist> for Vec<f64> {
    fn from(d: StateDist) -> Self {
        d.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueRole {
    Plain,
    Regularized,
}

/// State-value function `V: S -> R` tagged with how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueVector {
    pub values: Vec<f64>,
    pub role: ValueRole,
}

impl ValueVector {
    pub fn plain(values: Vec<f64>) -> Self {
        Self {
            values,
            role: ValueRole::Plain,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::plain(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, d: &StateDist) -> f64 {
        d.expect(&self.values)
    }

    /// `max_s |self(s) - other(s)|`.
    pub fn sup_dist(&self, other: &[f64]) -> f64 {
        sup_norm_diff(&self.values, other)
    }
}

/// `Q[s][a][b]` together with the state values it was backed up from.
#[derive(Debug, Clone, PartialEq)]
pub struct QTensor {
    n_states: usize,
    n_actions: usize,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl QTensor {
    pub(crate) fn new(n_states: usize, n_actions: usize, q: Vec<f64>, v: Vec<f64>) -> Self {
        Self {
            n_states,
            n_actions,
            q,
            v,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn q(&self, s: usize, a: usize, b: usize) -> f64 {
        self.q[(s * self.n_actions + a) * self.n_actions + b]
    }

    #[inline]
    pub fn advantage(&self, s: usize, a: usize, b: usize) -> f64 {
        self.q(s, a, b) - self.v[s]
    }

    pub fn values(&self) -> &[f64] {
        &self.v
    }

    /// `sum_a pi1(a|s) A(s, a, b)` for every `b`.
    pub fn weighted_advantage(&self, pi1: &TabularPolicy, s: usize) -> Vec<f64> {
        (0..self.n_actions)
            .map(|b| {
                (0..self.n_actions)
                    .map(|a| pi1.prob(s, a) * self.advantage(s, a, b))
                    .sum()
            })
            .collect()
    }

    /// `sum_a pi1(a|s) Q(s, a, b)` for every `b`.
    pub fn weighted_q(&self, pi1: &TabularPolicy, s: usize) -> Vec<f64> {
        (0..self.n_actions)
            .map(|b| {
                (0..self.n_actions)
                    .map(|a| pi1.prob(s, a) * self.q(s, a, b))
                    .sum()
            })
            .collect()
    }
}

pub(crate) fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
