//! Ground-truth solvers: certified matrix games, Shapley iteration, min-player
//! best responses and exploitability.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    backup_matrix, bellman_apply, evaluate_value, BellmanMode, MarkovGame, StateDist,
    TabularPolicy, ValueVector,
};
use crate::matrix::{argmax, argmin, PayoffMatrix};

/// Default certified value error for Shapley iteration and exploitability.
pub const DEFAULT_ORACLE_TOL: f64 = 1e-10;

/// Residual the best-response value iteration runs to before policy polishing.
pub const BEST_RESPONSE_VI_TOL: f64 = 1e-10;

/// Deterministic-policy enumeration is refused beyond this many policies.
pub const ENUMERATION_LIMIT: usize = 4096;

const MWU_MAX_ITERS: usize = 1 << 20;
const FIRST_CHECKPOINT: usize = 32;
// exhaustive square-support search is attempted when the number of support
// pairs stays below this
const EXHAUSTIVE_PAIR_LIMIT: usize = 20_000;

/// Mixed strategies of a matrix game with an exact duality-gap certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGameSolution {
    pub row_strategy: Vec<f64>,
    pub col_strategy: Vec<f64>,
    /// Midpoint of the certified bracket `[min_b (x^T A)_b, max_a (A f)_a]`.
    pub value: f64,
    pub duality_gap: f64,
    /// Multiplicative-weights rounds spent (0 for pure saddles).
    pub iterations: usize,
}

impl MatrixGameSolution {
    fn certify(a: &PayoffMatrix, x: Vec<f64>, f: Vec<f64>, iterations: usize) -> Self {
        let (lo, hi) = a.best_response_bounds(&x, &f);
        Self {
            row_strategy: x,
            col_strategy: f,
            value: 0.5 * (lo + hi),
            duality_gap: (hi - lo).max(0.0),
            iterations,
        }
    }
}

fn point(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Solves `max_x min_f x^T A f` to an exact duality gap of at most `tol`.
///
/// Hedge self-play with averaged iterates is the workhorse. Averages only
/// reach an `O(1/sqrt(t))` gap, so at every checkpoint the near-best-response
/// supports of the averages are used to solve the indifference equations
/// exactly; a candidate is accepted only after its gap is recomputed from
/// pure best responses. Small games fall back to scanning all square supports.
pub fn matrix_game_solve(a: &PayoffMatrix, tol: f64) -> Result<MatrixGameSolution> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidConfig(format!("solver tolerance {tol} must be positive")));
    }
    let (m, n) = (a.rows(), a.cols());

    // pure maximin / minimax pair; certifies pure saddles and constant games
    let row_mins: Vec<f64> = (0..m)
        .map(|i| (0..n).map(|j| a.get(i, j)).fold(f64::INFINITY, f64::min))
        .collect();
    let col_maxs: Vec<f64> = (0..n)
        .map(|j| (0..m).map(|i| a.get(i, j)).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let pure = MatrixGameSolution::certify(
        a,
        point(m, argmax(&row_mins)),
        point(n, argmin(&col_maxs)),
        0,
    );
    if pure.duality_gap <= tol {
        return Ok(pure);
    }
    let mut best = pure;

    let range = a.max_entry() - a.min_entry();
    let log_n = (m.max(n).max(2) as f64).ln();
    let mut score_x = vec![0.0; m];
    let mut score_f = vec![0.0; n];
    let mut x = vec![1.0 / m as f64; m];
    let mut f = vec![1.0 / n as f64; n];
    let mut sum_x = vec![0.0; m];
    let mut sum_f = vec![0.0; n];
    let mut checkpoint = FIRST_CHECKPOINT;
    let mut tried_exhaustive = false;

    for t in 1..=MWU_MAX_ITERS {
        sum_x.iter_mut().zip(&x).for_each(|(s, v)| *s += v);
        sum_f.iter_mut().zip(&f).for_each(|(s, v)| *s += v);
        let u = a.col_mix(&f);
        let l = a.row_mix(&x);
        score_x.iter_mut().zip(&u).for_each(|(s, v)| *s += v);
        score_f.iter_mut().zip(&l).for_each(|(s, v)| *s += v);
        let eta = (8.0 * log_n / t as f64).sqrt() / range;
        exp_weights(&score_x, eta, &mut x);
        exp_weights(&score_f, -eta, &mut f);

        if t == checkpoint {
            checkpoint *= 2;
            let tf = t as f64;
            let avg_x: Vec<f64> = sum_x.iter().map(|s| s / tf).collect();
            let avg_f: Vec<f64> = sum_f.iter().map(|s| s / tf).collect();
            let avg = MatrixGameSolution::certify(a, avg_x, avg_f, t);
            if avg.duality_gap <= tol {
                return Ok(avg);
            }
            if let Some(sol) = polish(a, &avg, tol, t) {
                return Ok(sol);
            }
            if avg.duality_gap < best.duality_gap {
                best = avg;
            }
            if !tried_exhaustive && t >= 4 * FIRST_CHECKPOINT {
                tried_exhaustive = true;
                if let Some(sol) = exhaustive_supports(a, tol, t) {
                    return Ok(sol);
                }
            }
        }
    }
    Err(Error::SolverBudget {
        iterations: MWU_MAX_ITERS,
        best_gap: best.duality_gap,
        tol,
    })
}

/// `out ∝ exp(eta * score)` with the exponent max-shifted.
fn exp_weights(score: &[f64], eta: f64, out: &mut [f64]) {
    let shift = score
        .iter()
        .map(|s| eta * s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, s) in out.iter_mut().zip(score) {
        *o = (eta * s - shift).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn polish(
    a: &PayoffMatrix,
    avg: &MatrixGameSolution,
    tol: f64,
    iterations: usize,
) -> Option<MatrixGameSolution> {
    let u = a.col_mix(&avg.col_strategy);
    let l = a.row_mix(&avg.row_strategy);
    let hi = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = l.iter().copied().fold(f64::INFINITY, f64::min);
    for mult in [2.0, 0.5, 8.0] {
        let delta = mult * avg.duality_gap;
        let rows: Vec<usize> = (0..u.len()).filter(|&i| u[i] >= hi - delta).collect();
        let cols: Vec<usize> = (0..l.len()).filter(|&j| l[j] <= lo + delta).collect();
        if let Some(sol) = support_solve(a, &rows, &cols, iterations) {
            if sol.duality_gap <= tol {
                return Some(sol);
            }
        }
    }
    None
}

/// Solves the indifference equations on the given supports (least squares
/// when the supports differ in size), clamps, renormalizes and certifies.
fn support_solve(
    a: &PayoffMatrix,
    rows: &[usize],
    cols: &[usize],
    iterations: usize,
) -> Option<MatrixGameSolution> {
    let (kr, kc) = (rows.len(), cols.len());
    // x-system: sum_{i in R} x_i A[i][j] - v = 0 for j in C, sum x = 1
    let mut mx = DMatrix::zeros(kc + 1, kr + 1);
    // f-system: sum_{j in C} A[i][j] f_j - w = 0 for i in R, sum f = 1
    let mut mf = DMatrix::zeros(kr + 1, kc + 1);
    for (ci, &j) in cols.iter().enumerate() {
        for (ri, &i) in rows.iter().enumerate() {
            mx[(ci, ri)] = a.get(i, j);
            mf[(ri, ci)] = a.get(i, j);
        }
        mx[(ci, kr)] = -1.0;
    }
    for ri in 0..kr {
        mf[(ri, kc)] = -1.0;
        mx[(kc, ri)] = 1.0;
    }
    for ci in 0..kc {
        mf[(kr, ci)] = 1.0;
    }
    let mut bx = DVector::zeros(kc + 1);
    bx[kc] = 1.0;
    let mut bf = DVector::zeros(kr + 1);
    bf[kr] = 1.0;

    let solve = |m: DMatrix<f64>, b: DVector<f64>| -> Option<DVector<f64>> {
        if m.is_square() {
            if let Some(sol) = m.clone().lu().solve(&b) {
                return Some(sol);
            }
        }
        m.svd(true, true).solve(&b, 1e-13).ok()
    };
    let sx = solve(mx, bx)?;
    let sf = solve(mf, bf)?;
    let x = scatter(a.rows(), rows, sx.as_slice())?;
    let f = scatter(a.cols(), cols, sf.as_slice())?;
    Some(MatrixGameSolution::certify(a, x, f, iterations))
}

fn scatter(len: usize, support: &[usize], sol: &[f64]) -> Option<Vec<f64>> {
    let mut out = vec![0.0; len];
    for (k, &i) in support.iter().enumerate() {
        let w = sol[k];
        if !w.is_finite() {
            return None;
        }
        out[i] = w.max(0.0);
    }
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    out.iter_mut().for_each(|w| *w /= total);
    Some(out)
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Every extreme equilibrium is the solution of a square nonsingular support
/// system, so scanning all equal-size supports is complete for small games.
fn exhaustive_supports(a: &PayoffMatrix, tol: f64, iterations: usize) -> Option<MatrixGameSolution> {
    let (m, n) = (a.rows(), a.cols());
    let pairs: usize = (1..=m.min(n))
        .map(|k| binom(m, k).saturating_mul(binom(n, k)))
        .fold(0usize, usize::saturating_add);
    if pairs > EXHAUSTIVE_PAIR_LIMIT {
        return None;
    }
    for k in 1..=m.min(n) {
        let row_sets = subsets(m, k);
        let col_sets = subsets(n, k);
        for rows in &row_sets {
            for cols in &col_sets {
                if let Some(sol) = support_solve(a, rows, cols, iterations) {
                    if sol.duality_gap <= tol {
                        return Some(sol);
                    }
                }
            }
        }
    }
    None
}

/// `V*` with per-state equilibrium strategies of the final stage games.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashCertificate {
    pub v_star: ValueVector,
    pub pi1_star: TabularPolicy,
    pub pi2_star: TabularPolicy,
    /// `||T V* - V*||_inf`.
    pub residual: f64,
    pub iterations: usize,
    pub tol: f64,
}

/// Stage-game solver tolerance used inside Shapley iteration for value error `tol`.
pub fn shapley_stage_tol(gamma: f64, tol: f64) -> f64 {
    (tol * (1.0 - gamma) / 4.0).min(1e-9)
}

fn full_backup(game: &MarkovGame, v: &[f64], stage_tol: f64) -> Result<Vec<MatrixGameSolution>> {
    (0..game.n_states())
        .map(|s| matrix_game_solve(&backup_matrix(game, v, s), stage_tol))
        .collect()
}

/// Shapley value iteration `V <- T V` from `V = 0` with certified value error `tol`.
///
/// The contraction bound turns the residual into a value error: stopping at
/// `||V_{n+1} - V_n|| <= tol (1 - gamma) / (2 gamma)` leaves at most `tol / 2`.
/// Iteration continues somewhat further when floating point allows, so that
/// the extracted stationary strategies (whose loss scales with
/// `gamma / (1 - gamma)` times the value error) are also within `tol`.
pub fn shapley_value_iteration(game: &MarkovGame, tol: f64) -> Result<NashCertificate> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidConfig(format!("Shapley tolerance {tol} must be positive")));
    }
    let gamma = game.gamma();
    let stage_tol = shapley_stage_tol(gamma, tol);
    let ns = game.n_states();
    let mut v = vec![0.0; ns];
    let mut iterations = 0usize;

    if gamma == 0.0 {
        v = full_backup(game, &v, stage_tol)?.iter().map(|s| s.value).collect();
        iterations = 1;
    } else {
        let certified_stop = tol * (1.0 - gamma) / (2.0 * gamma);
        let fp_floor = 16.0 * f64::EPSILON * game.value_bound();
        let target = (tol * (1.0 - gamma).powi(2) / (4.0 * gamma * gamma))
            .max(fp_floor)
            .min(certified_stop);
        let cap = ((target / game.value_bound()).ln() / gamma.ln()).ceil().max(0.0) as usize + 200;
        loop {
            let next: Vec<f64> = full_backup(game, &v, stage_tol)?
                .iter()
                .map(|s| s.value)
                .collect();
            let res = crate::game::sup_norm_diff(&next, &v);
            v = next;
            iterations += 1;
            if res <= target {
                break;
            }
            if iterations >= cap {
                if res <= certified_stop {
                    break;
                }
                return Err(Error::Numerics(format!(
                    "Shapley iteration stalled at residual {res:e} after {iterations} sweeps"
                )));
            }
        }
    }

    let stage = full_backup(game, &v, stage_tol)?;
    let tv: Vec<f64> = stage.iter().map(|s| s.value).collect();
    let residual = crate::game::sup_norm_diff(&tv, &v);
    let na = game.n_actions();
    let mut p1 = Vec::with_capacity(ns * na);
    let mut p2 = Vec::with_capacity(ns * na);
    for sol in &stage {
        p1.extend_from_slice(&sol.row_strategy);
        p2.extend_from_slice(&sol.col_strategy);
    }
    Ok(NashCertificate {
        v_star: ValueVector::plain(v),
        pi1_star: TabularPolicy::from_weights(ns, na, p1)?,
        pi2_star: TabularPolicy::from_weights(ns, na, p2)?,
        residual,
        iterations,
        tol,
    })
}

/// Deterministic best response of the min player and its exact value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    pub pi2: TabularPolicy,
    /// `V^{pi1} = inf_{pi2} V^{pi1, pi2}`.
    pub value: ValueVector,
    pub actions: Vec<usize>,
}

/// `sum_a pi1(a|s) (r(s,a,b) + gamma sum_s' P(s'|s,a,b) v(s'))` for all `b`.
fn min_player_q(game: &MarkovGame, pi1: &TabularPolicy, v: &[f64], s: usize) -> Vec<f64> {
    backup_matrix(game, v, s).row_mix(pi1.row(s))
}

/// Solves the min player's induced MDP against `pi1`.
///
/// Value iteration on `T_{pi1}` is run to a residual of 1e-10, a greedy
/// deterministic policy is extracted (ties to the lowest action) and then
/// polished by policy iteration, so the returned value is an exact evaluation.
pub fn best_response_min(game: &MarkovGame, pi1: &TabularPolicy) -> Result<BestResponse> {
    let ns = game.n_states();
    let na = game.n_actions();
    let mut v = vec![0.0; ns];
    let cap = if game.gamma() == 0.0 {
        1
    } else {
        ((BEST_RESPONSE_VI_TOL / game.value_bound()).ln() / game.gamma().ln()).ceil() as usize + 50
    };
    for _ in 0..cap.max(1) {
        let next = bellman_apply(game, &v, BellmanMode::MaxPlayerFixed(pi1))?.values;
        let res = crate::game::sup_norm_diff(&next, &v);
        v = next;
        if res <= BEST_RESPONSE_VI_TOL {
            break;
        }
    }
    let mut actions: Vec<usize> = (0..ns)
        .map(|s| argmin(&min_player_q(game, pi1, &v, s)))
        .collect();
    let mut pi2 = TabularPolicy::deterministic(na, &actions)?;
    let mut value = evaluate_value(game, pi1, &pi2)?;
    // policy iteration terminates: each switch strictly lowers the value
    for _ in 0..(10 * ns * na + 10) {
        let mut changed = false;
        for (s, act) in actions.iter_mut().enumerate() {
            let q = min_player_q(game, pi1, &value.values, s);
            let b = argmin(&q);
            if q[b] < q[*act] - 1e-12 {
                *act = b;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        pi2 = TabularPolicy::deterministic(na, &actions)?;
        value = evaluate_value(game, pi1, &pi2)?;
    }
    Ok(BestResponse { pi2, value, actions })
}

/// Caches `V*` so that many policies can be scored against one game.
#[derive(Debug, Clone)]
pub struct ExploitabilityMeter {
    game: MarkovGame,
    certificate: NashCertificate,
}

impl ExploitabilityMeter {
    pub fn new(game: &MarkovGame, tol: f64) -> Result<Self> {
        Ok(Self {
            game: game.clone(),
            certificate: shapley_value_iteration(game, tol)?,
        })
    }

    pub fn certificate(&self) -> &NashCertificate {
        &self.certificate
    }

    pub fn v_star(&self) -> &ValueVector {
        &self.certificate.v_star
    }

    pub fn game(&self) -> &MarkovGame {
        &self.game
    }

    /// `V*(rho) - inf_{pi2} V^{pi1, pi2}(rho)`.
    pub fn exploitability(&self, pi1: &TabularPolicy, rho: &StateDist) -> Result<f64> {
        self.game.check_dist(rho, "rho")?;
        let br = best_response_min(&self.game, pi1)?;
        Ok(self.v_star().at(rho) - br.value.at(rho))
    }
}

/// One-shot exploitability with the default oracle tolerance.
pub fn exploitability(game: &MarkovGame, pi1: &TabularPolicy, rho: &StateDist) -> Result<f64> {
    ExploitabilityMeter::new(game, DEFAULT_ORACLE_TOL)?.exploitability(pi1, rho)
}

/// Brute-force enumeration over deterministic min-player policies, used to
/// validate the best-response solver.
pub mod enumeration {
    use super::*;

    /// Number of deterministic stationary policies, or `None` on overflow.
    pub fn policy_count(n_states: usize, n_actions: usize) -> Option<usize> {
        u32::try_from(n_states)
            .ok()
            .and_then(|s| n_actions.checked_pow(s))
    }

    /// Every deterministic policy as an action-per-state vector, in
    /// lexicographic order (state 0 varies slowest).
    pub fn deterministic_policies(n_states: usize, n_actions: usize) -> Result<Vec<Vec<usize>>> {
        let count = policy_count(n_states, n_actions)
            .filter(|c| *c <= ENUMERATION_LIMIT)
            .ok_or(Error::EnumerationBudget {
                required: (n_actions as f64).powi(n_states as i32),
                budget: ENUMERATION_LIMIT as f64,
            })?;
        Ok((0..count)
            .map(|mut idx| {
                let mut acts = vec![0; n_states];
                for s in (0..n_states).rev() {
                    acts[s] = idx % n_actions;
                    idx /= n_actions;
                }
                acts
            })
            .collect())
    }

    /// Per-state minimum of `V^{pi1, pi2}` over all deterministic `pi2`.
    pub fn min_value_by_enumeration(game: &MarkovGame, pi1: &TabularPolicy) -> Result<ValueVector> {
        let mut best = vec![f64::INFINITY; game.n_states()];
        for acts in deterministic_policies(game.n_states(), game.n_actions())? {
            let pi2 = TabularPolicy::deterministic(game.n_actions(), &acts)?;
            let v = evaluate_value(game, pi1, &pi2)?;
            best.iter_mut().zip(&v.values).for_each(|(b, x)| *b = b.min(*x));
        }
        Ok(ValueVector::plain(best))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> PayoffMatrix {
        PayoffMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matching_pennies_is_uniform() {
        let sol = matrix_game_solve(&m(&[&[1.0, 0.0], &[0.0, 1.0]]), 1e-9).unwrap();
        assert!((sol.value - 0.5).abs() < 1e-9);
        for p in sol.row_strategy.iter().chain(&sol.col_strategy) {
            assert!((p - 0.5).abs() < 1e-9);
        }
        assert!(sol.duality_gap <= 1e-9);
    }

    #[test]
    fn dominance_gives_pure_saddle() {
        let sol = matrix_game_solve(&m(&[&[0.9, 0.8], &[0.2, 0.1]]), 1e-9).unwrap();
        assert_eq!(sol.row_strategy, vec![1.0, 0.0]);
        assert_eq!(sol.col_strategy, vec![0.0, 1.0]);
        assert!((sol.value - 0.8).abs() < 1e-15);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn degenerate_games_certify() {
        for a in [
            m(&[&[0.3, 0.3], &[0.3, 0.3]]),
            m(&[&[0.5, 0.5, 0.1], &[0.5, 0.5, 0.9], &[0.2, 0.7, 0.5]]),
            m(&[&[1.0, 0.0, 0.5], &[0.0, 1.0, 0.5], &[1.0, 0.0, 0.5]]),
            m(&[&[0.0, 1.0, 0.2, 0.6]]),
            m(&[&[0.1], &[0.7], &[0.4]]),
        ] {
            let sol = matrix_game_solve(&a, 1e-11).unwrap();
            assert!(sol.duality_gap <= 1e-11, "{a:?}");
        }
    }

    #[test]
    fn rock_paper_scissors() {
        let a = m(&[&[0.5, 0.0, 1.0], &[1.0, 0.5, 0.0], &[0.0, 1.0, 0.5]]);
        let sol = matrix_game_solve(&a, 1e-12).unwrap();
        assert!((sol.value - 0.5).abs() < 1e-12);
        assert!(sol.row_strategy.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-9));
    }

    #[test]
    fn bad_tolerance_rejected() {
        assert!(matches!(
            matrix_game_solve(&m(&[&[1.0]]), 0.0),
            Err(Error::InvalidConfig(_))
        ));
    }

    fn pennies(gamma: f64) -> MarkovGame {
        MarkovGame::from_nested(
            gamma,
            &[vec![vec![1.0, 0.0], vec![0.0, 1.0]]],
            &[vec![vec![vec![1.0]; 2]; 2]],
        )
        .unwrap()
    }

    #[test]
    fn shapley_on_matching_pennies() {
        let cert = shapley_value_iteration(&pennies(0.9), 1e-10).unwrap();
        assert!((cert.v_star.values[0] - 5.0).abs() <= 1e-10);
        assert!(cert.residual <= 1e-10);
        let g0 = shapley_value_iteration(&pennies(0.0), 1e-10).unwrap();
        assert!((g0.v_star.values[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn exploitability_of_pure_row() {
        let pure = TabularPolicy::deterministic(2, &[0]).unwrap();
        let e = exploitability(&pennies(0.0), &pure, &StateDist::uniform(1)).unwrap();
        assert!((e - 0.5).abs() < 1e-10);
        let cert = shapley_value_iteration(&pennies(0.9), 1e-10).unwrap();
        let e = exploitability(&pennies(0.9), &cert.pi1_star, &StateDist::uniform(1)).unwrap();
        assert!(e.abs() <= 2e-10);
    }

    #[test]
    fn best_response_gamma_zero_is_myopic() {
        let g = MarkovGame::from_nested(
            0.0,
            &[vec![vec![0.2, 0.9, 0.5], vec![0.4, 0.1, 0.5], vec![0.3, 0.3, 0.3]]],
            &[vec![vec![vec![1.0]; 3]; 3]],
        )
        .unwrap();
        let pi1 = TabularPolicy::from_probs(1, 3, vec![0.5, 0.5, 0.0]).unwrap();
        let br = best_response_min(&g, &pi1).unwrap();
        assert_eq!(br.actions, vec![0]);
        assert!((br.value.values[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn enumeration_gate() {
        assert!(matches!(
            enumeration::deterministic_policies(13, 2),
            Err(Error::EnumerationBudget { .. })
        ));
        assert_eq!(enumeration::deterministic_policies(2, 3).unwrap().len(), 9);
    }
}
