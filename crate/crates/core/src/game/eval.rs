//! Exact policy evaluation, Bellman operators and policy-gradient quantities.

use nalgebra::{DMatrix, DVector};

use super::{MarkovGame, QTensor, StateDist, TabularPolicy, ValueRole, ValueVector};
use crate::error::{Error, Result};
use crate::matrix::PayoffMatrix;
use crate::oracle::matrix_game_solve;

/// Residual every exact linear solve must reach (max norm).
pub const SOLVE_RESIDUAL_TOL: f64 = 1e-10;

/// Tolerance handed to the matrix-game solver by the full Bellman operator.
pub const BELLMAN_SOLVER_TOL: f64 = 1e-9;

/// Probabilities are floored here before taking logarithms.
pub(crate) const LOG_FLOOR: f64 = 1e-300;

/// Which Bellman operator to apply.
#[derive(Debug, Clone, Copy)]
pub enum BellmanMode<'a> {
    /// `T_{pi1,pi2} v = r_pi + gamma P_pi v`.
    Joint(&'a TabularPolicy, &'a TabularPolicy),
    /// `T_{pi1} v = inf_{pi2} T_{pi1,pi2} v` (min player best-responds).
    MaxPlayerFixed(&'a TabularPolicy),
    /// `T v = sup_{pi1} inf_{pi2} T_{pi1,pi2} v`.
    Full,
}

/// Whether the policy gradient plugs in advantages or raw action values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientForm {
    Advantage,
    ActionValue,
}

/// Expected one-step reward `r_pi(s)` and transition matrix `P_pi(s, s')`
/// under the joint product policy.
pub fn joint_kernel(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    game.check_policy(pi1, "max player")?;
    game.check_policy(pi2, "min player")?;
    let (ns, na) = (game.n_states(), game.n_actions());
    let mut r = vec![0.0; ns];
    let mut p = DMatrix::zeros(ns, ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = pi1.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for b in 0..na {
                let w = pa * pi2.prob(s, b);
                if w == 0.0 {
                    continue;
                }
                r[s] += w * game.reward(s, a, b);
                for (s2, q) in game.next_dist(s, a, b).iter().enumerate() {
                    p[(s, s2)] += w * q;
                }
            }
        }
    }
    Ok((r, p))
}

/// Solves `(I - gamma M) x = rhs` densely with one refinement sweep.
fn solve_discounted(m: &DMatrix<f64>, gamma: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let system = DMatrix::identity(n, n) - m * gamma;
    let lu = system.clone().lu();
    let b = DVector::from_column_slice(rhs);
    let mut x = lu
        .solve(&b)
        .ok_or_else(|| Error::Numerics("singular discounted system".into()))?;
    let residual = &b - &system * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    let residual = &b - &system * &x;
    let worst = residual.amax();
    if !(worst <= SOLVE_RESIDUAL_TOL) {
        return Err(Error::Numerics(format!(
            "linear solve residual {worst:e} above {SOLVE_RESIDUAL_TOL:e}"
        )));
    }
    Ok(x.iter().copied().collect())
}

/// `V^{pi1,pi2}`, the unique fixed point of `T_{pi1,pi2}`.
pub fn evaluate_value(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
) -> Result<ValueVector> {
    let (r, p) = joint_kernel(game, pi1, pi2)?;
    Ok(ValueVector::plain(solve_discounted(&p, game.gamma(), &r)?))
}

/// Shannon entropy of `pi(. | s)` in nats.
pub fn policy_entropy(pi: &TabularPolicy, s: usize) -> f64 {
    pi.row(s)
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| -p * p.max(LOG_FLOOR).ln())
        .sum()
}

/// Entropy-regularized value `V_tau = V - tau H` of the min player's policy,
/// solved as `V_tau = r_pi - tau h_pi + gamma P_pi V_tau`.
pub fn evaluate_regularized_value(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
    tau: f64,
) -> Result<ValueVector> {
    let (mut r, p) = joint_kernel(game, pi1, pi2)?;
    for (s, rs) in r.iter_mut().enumerate() {
        *rs -= tau * policy_entropy(pi2, s);
    }
    Ok(ValueVector {
        values: solve_discounted(&p, game.gamma(), &r)?,
        role: ValueRole::Regularized,
    })
}

fn backup(game: &MarkovGame, v: &[f64]) -> Vec<f64> {
    let (ns, na) = (game.n_states(), game.n_actions());
    let mut q = Vec::with_capacity(ns * na * na);
    for s in 0..ns {
        for a in 0..na {
            for b in 0..na {
                q.push(game.reward(s, a, b) + game.gamma() * game.expected_next(s, a, b, v));
            }
        }
    }
    q
}

/// `Q^{pi1,pi2}` and the advantage `Q - V`.
pub fn q_and_advantage(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
) -> Result<QTensor> {
    let v = evaluate_value(game, pi1, pi2)?.values;
    let q = backup(game, &v);
    Ok(QTensor::new(game.n_states(), game.n_actions(), q, v))
}

/// Soft action values `Q_tau = r + gamma P V_tau`; the carried state values are `V_tau`.
pub fn regularized_q(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
    tau: f64,
) -> Result<QTensor> {
    let v = evaluate_regularized_value(game, pi1, pi2, tau)?.values;
    let q = backup(game, &v);
    Ok(QTensor::new(game.n_states(), game.n_actions(), q, v))
}

/// Discounted state visitation `d = (1 - gamma) sum_t gamma^t start P_pi^t`.
pub fn visitation(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
    start: &StateDist,
) -> Result<StateDist> {
    game.check_dist(start, "start distribution")?;
    let (_, p) = joint_kernel(game, pi1, pi2)?;
    let rhs: Vec<f64> = start
        .as_slice()
        .iter()
        .map(|w| (1.0 - game.gamma()) * w)
        .collect();
    // d (I - gamma P) = (1 - gamma) start  <=>  (I - gamma P^T) d^T = ...
    let mut d = solve_discounted(&p.transpose(), game.gamma(), &rhs)?;
    for w in d.iter_mut() {
        if *w < 0.0 {
            *w = 0.0;
        }
    }
    let total: f64 = d.iter().sum();
    if (total - 1.0).abs() > SOLVE_RESIDUAL_TOL {
        return Err(Error::Numerics(format!("visitation mass {total}")));
    }
    d.iter_mut().for_each(|w| *w /= total);
    StateDist::new(d)
}

/// Stage matrix `A_s(a, b) = r(s, a, b) + gamma sum_{s'} P(s'|s,a,b) v(s')`.
pub fn backup_matrix(game: &MarkovGame, v: &[f64], s: usize) -> PayoffMatrix {
    let na = game.n_actions();
    let mut data = Vec::with_capacity(na * na);
    for a in 0..na {
        for b in 0..na {
            data.push(game.reward(s, a, b) + game.gamma() * game.expected_next(s, a, b, v));
        }
    }
    PayoffMatrix::new(na, na, data).expect("square stage matrix")
}

/// Applies one of the three Bellman operators to `v`.
pub fn bellman_apply(game: &MarkovGame, v: &[f64], mode: BellmanMode<'_>) -> Result<ValueVector> {
    game.check_values(v, "value vector")?;
    let ns = game.n_states();
    let mut out = vec![0.0; ns];
    match mode {
        BellmanMode::Joint(pi1, pi2) => {
            let (r, p) = joint_kernel(game, pi1, pi2)?;
            for s in 0..ns {
                let next: f64 = (0..ns).map(|s2| p[(s, s2)] * v[s2]).sum();
                out[s] = r[s] + game.gamma() * next;
            }
        }
        BellmanMode::MaxPlayerFixed(pi1) => {
            game.check_policy(pi1, "max player")?;
            for (s, o) in out.iter_mut().enumerate() {
                let stage = backup_matrix(game, v, s);
                // linear in pi2, so the infimum sits at a pure column
                *o = stage
                    .row_mix(pi1.row(s))
                    .into_iter()
                    .fold(f64::INFINITY, f64::min);
            }
        }
        BellmanMode::Full => {
            for (s, o) in out.iter_mut().enumerate() {
                *o = matrix_game_solve(&backup_matrix(game, v, s), BELLMAN_SOLVER_TOL)?.value;
            }
        }
    }
    Ok(ValueVector::plain(out))
}

fn require_logits(pi2: &TabularPolicy) -> Result<()> {
    if pi2.logits().is_none() {
        return Err(Error::InvalidPolicy(
            "min player policy must be softmax-parameterized (logits missing)".into(),
        ));
    }
    Ok(())
}

/// Exact gradient of `V^{pi1,pi2}(sigma)` with respect to the min player's
/// softmax logits `theta_2[s][b]`, flattened row-major.
pub fn policy_gradient_min(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
    sigma: &StateDist,
    form: GradientForm,
) -> Result<Vec<f64>> {
    require_logits(pi2)?;
    game.check_dist(sigma, "sigma")?;
    let q = q_and_advantage(game, pi1, pi2)?;
    let d = visitation(game, pi1, pi2, sigma)?;
    let (ns, na) = (game.n_states(), game.n_actions());
    let scale = 1.0 / (1.0 - game.gamma());
    let mut grad = vec![0.0; ns * na];
    for s in 0..ns {
        let ds = d.as_slice()[s];
        if ds == 0.0 {
            continue;
        }
        for a in 0..na {
            let pa = pi1.prob(s, a);
            if pa == 0.0 {
                continue;
            }
            for b in 0..na {
                let pb = pi2.prob(s, b);
                let x = match form {
                    GradientForm::Advantage => q.advantage(s, a, b),
                    GradientForm::ActionValue => q.q(s, a, b),
                };
                let w = scale * ds * pa * pb * x;
                // grad_theta(s, c) log pi2(b|s) = 1[b = c] - pi2(c|s)
                for c in 0..na {
                    let score = f64::from(u8::from(b == c)) - pi2.prob(s, c);
                    grad[s * na + c] += w * score;
                }
            }
        }
    }
    Ok(grad)
}

/// Fisher information `E_{s~d_sigma} E_{b~pi2} score score^T` over the min
/// player's logits.
pub fn fisher_matrix(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
    sigma: &StateDist,
) -> Result<DMatrix<f64>> {
    require_logits(pi2)?;
    let d = visitation(game, pi1, pi2, sigma)?;
    let (ns, na) = (game.n_states(), game.n_actions());
    let dim = ns * na;
    let mut f = DMatrix::zeros(dim, dim);
    let mut score = vec![0.0; na];
    for s in 0..ns {
        let ds = d.as_slice()[s];
        for b in 0..na {
            let w = ds * pi2.prob(s, b);
            if w == 0.0 {
                continue;
            }
            for (c, sc) in score.iter_mut().enumerate() {
                *sc = f64::from(u8::from(b == c)) - pi2.prob(s, c);
            }
            for c in 0..na {
                for c2 in 0..na {
                    f[(s * na + c, s * na + c2)] += w * score[c] * score[c2];
                }
            }
        }
    }
    Ok(f)
}

/// Fixed-point residual `||T_{pi1,pi2} v - v||_inf`.
#[cfg(test)]
fn joint_residual(
    game: &MarkovGame,
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
    v: &[f64],
) -> Result<f64> {
    let tv = bellman_apply(game, v, BellmanMode::Joint(pi1, pi2))?;
    Ok(super::sup_norm_diff(&tv.values, v))
}
