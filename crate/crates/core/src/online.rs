//! Sample-based two-player NPG with log-linear policies: an episodic sampling
//! oracle, Monte Carlo action values, projected SGD for the compatible NPG
//! direction, and the online greedy and iteration steps.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{
    backup_matrix, evaluate_value, q_and_advantage, visitation, MarkovGame, StateDist,
    TabularPolicy, SIMPLEX_TOL,
};
use crate::oracle::{best_response_min, matrix_game_solve, ExploitabilityMeter, DEFAULT_ORACLE_TOL};

/// Rollouts stop after `ceil(HORIZON_FACTOR / (1 - gamma))` steps at the latest.
pub const HORIZON_FACTOR: f64 = 50.0;

/// Tolerance for the per-state equilibria used by the `iota` diagnostic.
const IOTA_SOLVER_TOL: f64 = 1e-9;

pub fn horizon_cap(gamma: f64) -> usize {
    (HORIZON_FACTOR / (1.0 - gamma)).ceil() as usize
}

/// Features `phi[s][a] in R^d`, shared by both players.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    n_states: usize,
    n_actions: usize,
    dim: usize,
    phi: Vec<f64>,
    norm_bound: f64,
}

impl FeatureMap {
    /// `phi` is row-major `[s][a][i]`. The norm bound `D` is the largest
    /// feature norm.
    pub fn new(n_states: usize, n_actions: usize, dim: usize, phi: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 || dim == 0 || phi.len() != n_states * n_actions * dim {
            return Err(Error::Dimension(format!(
                "feature map {n_states}x{n_actions}x{dim} got {} entries",
                phi.len()
            )));
        }
        if phi.iter().any(|x| !x.is_finite()) {
            return Err(Error::Range("feature map has non-finite entries".into()));
        }
        let norm_bound = phi.chunks(dim).map(norm).fold(0.0, f64::max);
        Ok(Self {
            n_states,
            n_actions,
            dim,
            phi,
            norm_bound,
        })
    }

    /// Indicator features `e_{(s, a)}` with `d = |S||A|` and `D = 1`.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        let dim = n_states * n_actions;
        let mut phi = vec![0.0; dim * dim];
        for i in 0..dim {
            phi[i * dim + i] = 1.0;
        }
        Self {
            n_states,
            n_actions,
            dim,
            phi,
            norm_bound: 1.0,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn phi(&self, s: usize, a: usize) -> &[f64] {
        let at = (s * self.n_actions + a) * self.dim;
        &self.phi[at..at + self.dim]
    }

    /// `D`, the largest feature norm.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    /// `B = 2D` bounds every score vector.
    pub fn score_bound(&self) -> f64 {
        2.0 * self.norm_bound
    }

    /// `beta = D^2`: `log pi_theta(a|s)` is `beta`-smooth in `theta`.
    pub fn smoothness(&self) -> f64 {
        self.norm_bound * self.norm_bound
    }

    fn check_game(&self, game: &MarkovGame) -> Result<()> {
        if self.n_states != game.n_states() || self.n_actions != game.n_actions() {
            return Err(Error::Dimension(format!(
                "features are {}x{}, game is {}x{}",
                self.n_states,
                self.n_actions,
                game.n_states(),
                game.n_actions()
            )));
        }
        Ok(())
    }
}

/// `pi_theta(a|s) ∝ exp(theta^T phi_{s,a})`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogLinearPolicy {
    features: Arc<FeatureMap>,
    theta: Vec<f64>,
}

impl LogLinearPolicy {
    pub fn zeros(features: Arc<FeatureMap>) -> Self {
        let theta = vec![0.0; features.dim()];
        Self { features, theta }
    }

    pub fn from_params(features: Arc<FeatureMap>, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != features.dim() {
            return Err(Error::Dimension(format!(
                "parameters have length {}, features have dimension {}",
                theta.len(),
                features.dim()
            )));
        }
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidPolicy("non-finite parameters".into()));
        }
        Ok(Self { features, theta })
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn features(&self) -> &Arc<FeatureMap> {
        &self.features
    }

    pub fn logits_at(&self, s: usize) -> Vec<f64> {
        (0..self.features.n_actions())
            .map(|a| dot(&self.theta, self.features.phi(s, a)))
            .collect()
    }

    pub fn probs_at(&self, s: usize) -> Vec<f64> {
        let mut p = self.logits_at(s);
        let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        p.iter_mut().for_each(|x| *x = (*x - hi).exp());
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }

    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        let z = self.logits_at(s);
        let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = hi + z.iter().map(|x| (x - hi).exp()).sum::<f64>().ln();
        z[a] - lse
    }

    /// `grad log pi(a|s) = phi_{s,a} - E_{a'~pi} phi_{s,a'}`.
    pub fn score(&self, s: usize, a: usize) -> Vec<f64> {
        let mean = self.mean_feature(s, &self.probs_at(s));
        self.features
            .phi(s, a)
            .iter()
            .zip(&mean)
            .map(|(p, m)| p - m)
            .collect()
    }

    fn mean_feature(&self, s: usize, probs: &[f64]) -> Vec<f64> {
        let mut mean = vec![0.0; self.features.dim()];
        for (a, pa) in probs.iter().enumerate() {
            axpy(&mut mean, *pa, self.features.phi(s, a));
        }
        mean
    }

    /// Tabular view carrying the logits `theta^T phi`.
    pub fn to_tabular(&self) -> TabularPolicy {
        let (ns, na) = (self.features.n_states(), self.features.n_actions());
        let logits = (0..ns).flat_map(|s| self.logits_at(s)).collect();
        TabularPolicy::from_logits(ns, na, logits).expect("finite logits give a valid policy")
    }

    fn table(&self) -> ScoreTable {
        let pi = self.to_tabular();
        let ns = self.features.n_states();
        let mean = (0..ns)
            .flat_map(|s| self.mean_feature(s, pi.row(s)))
            .collect();
        ScoreTable { pi, mean }
    }
}

/// Tabular probabilities and per-state mean features of a frozen policy.
struct ScoreTable {
    pi: TabularPolicy,
    mean: Vec<f64>,
}

impl ScoreTable {
    fn score_into(&self, features: &FeatureMap, s: usize, a: usize, out: &mut [f64]) {
        let d = features.dim();
        let mean = &self.mean[s * d..(s + 1) * d];
        for ((o, p), m) in out.iter_mut().zip(features.phi(s, a)).zip(mean) {
            *o = p - m;
        }
    }
}

/// Uniform mixture over stored log-linear policies (the averaged greedy-step
/// output; log-linear policies are not closed under averaging).
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePolicy {
    features: Arc<FeatureMap>,
    params: Vec<Vec<f64>>,
}

impl MixturePolicy {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn component(&self, i: usize) -> LogLinearPolicy {
        LogLinearPolicy {
            features: Arc::clone(&self.features),
            theta: self.params[i].clone(),
        }
    }

    /// Per-state mixed distribution `(1/n) sum_i pi_i(.|s)`.
    pub fn induced(&self) -> TabularPolicy {
        let (ns, na) = (self.features.n_states(), self.features.n_actions());
        let mut probs = vec![0.0; ns * na];
        for i in 0..self.len() {
            let c = self.component(i);
            for s in 0..ns {
                for (o, p) in probs[s * na..(s + 1) * na].iter_mut().zip(c.probs_at(s)) {
                    *o += p;
                }
            }
        }
        normalize_rows(&mut probs, na);
        TabularPolicy::from_probs(ns, na, probs).expect("mixture rows are distributions")
    }

    /// Draws a component index, then an action from that component.
    pub fn sample<R: Rng>(&self, s: usize, rng: &mut R) -> usize {
        let c = self.component(rng.random_range(0..self.len()));
        pick(&c.probs_at(s), rng.random())
    }
}

/// Named RNG streams derived from the master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    GreedyMin,
    GreedyMax,
    Iteration,
    Select,
    Free,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Self::GreedyMin => 0x6d69_6e00,
            Self::GreedyMax => 0x6d61_7800,
            Self::Iteration => 0x6974_6572,
            Self::Select => 0x7365_6c65,
            Self::Free => 0x6672_6565,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of stream `(module, k, t)` under `master`.
pub fn stream_seed(master: u64, stream: Stream, k: usize, t: usize) -> u64 {
    splitmix(splitmix(splitmix(master ^ stream.tag()) ^ k as u64) ^ t as u64)
}

/// Episodic access to a game: restart from `nu0`, simulate, stop at will.
#[derive(Debug, Clone)]
pub struct SamplingOracle<'g> {
    game: &'g MarkovGame,
    nu0: Vec<f64>,
    nu0_cdf: Vec<f64>,
    seed: u64,
    cap: usize,
    rng: ChaCha8Rng,
    calls: u64,
    env_steps: u64,
}

impl<'g> SamplingOracle<'g> {
    /// `nu0` is row-major over `(s, a, b)`.
    pub fn new(game: &'g MarkovGame, nu0: Vec<f64>, seed: u64) -> Result<Self> {
        let na = game.n_actions();
        if nu0.len() != game.n_states() * na * na {
            return Err(Error::Dimension(format!(
                "nu0 needs {} entries, got {}",
                game.n_states() * na * na,
                nu0.len()
            )));
        }
        if nu0.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidDistribution("nu0 has negative weights".into()));
        }
        let total: f64 = nu0.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidDistribution(format!("nu0 sums to {total}")));
        }
        let nu0_cdf = nu0
            .iter()
            .scan(0.0, |acc, w| {
                *acc += w;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            game,
            nu0,
            nu0_cdf,
            seed,
            cap: horizon_cap(game.gamma()),
            rng: ChaCha8Rng::seed_from_u64(stream_seed(seed, Stream::Free, 0, 0)),
            calls: 0,
            env_steps: 0,
        })
    }

    /// `nu0(s, a, b) = sigma(s) / |A|^2`.
    pub fn with_sigma(game: &'g MarkovGame, sigma: &StateDist, seed: u64) -> Result<Self> {
        game.check_dist(sigma, "sigma")?;
        let na = game.n_actions();
        let w = 1.0 / (na * na) as f64;
        let nu0 = sigma
            .as_slice()
            .iter()
            .flat_map(|p| std::iter::repeat_n(p * w, na * na))
            .collect();
        Self::new(game, nu0, seed)
    }

    pub fn game(&self) -> &'g MarkovGame {
        self.game
    }

    pub fn nu0(&self) -> &[f64] {
        &self.nu0
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn horizon_cap(&self) -> usize {
        self.cap
    }

    /// Episodes started so far (one per visitation draw, rollout or tuple).
    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Transitions simulated so far.
    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Switches to the named stream `(module, k, t)`.
    pub fn stream(&mut self, stream: Stream, k: usize, t: usize) {
        self.rng = ChaCha8Rng::seed_from_u64(stream_seed(self.seed, stream, k, t));
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Number of continuations before stopping: `P(L >= n) = gamma^n`,
    /// truncated at `limit`.
    #[inline]
    fn continuations(&mut self, limit: usize) -> usize {
        let gamma = self.game.gamma();
        if gamma == 0.0 {
            return 0;
        }
        let u = 1.0 - self.rng.random::<f64>();
        let l = (u.ln() / gamma.ln()).floor();
        if l < limit as f64 {
            l as usize
        } else {
            limit
        }
    }

    #[inline]
    fn draw(&mut self, row: &[f64]) -> usize {
        pick(row, self.rng.random())
    }

    #[inline]
    fn transition(&mut self, s: usize, a: usize, b: usize) -> usize {
        self.env_steps += 1;
        let u = self.rng.random();
        pick(self.game.next_dist(s, a, b), u)
    }

    fn draw_nu0(&mut self) -> (usize, usize, usize) {
        let u: f64 = self.rng.random();
        let mut i = self.nu0_cdf.partition_point(|c| *c <= u);
        if i >= self.nu0.len() {
            i = self.nu0.iter().rposition(|w| *w > 0.0).expect("nu0 has mass");
        }
        let na = self.game.n_actions();
        (i / (na * na), (i / na) % na, i % na)
    }

    fn draw_state(&mut self, sigma: &[f64]) -> usize {
        self.draw(sigma)
    }

    /// One exact draw from `nu^{pi1,pi2}_{nu0}`: start at `nu0`, continue with
    /// probability `gamma` per step, keep the tuple where the episode stops.
    /// The geometric episode length is drawn up front.
    pub fn sample_state_action_visitation(
        &mut self,
        pi1: &TabularPolicy,
        pi2: &TabularPolicy,
    ) -> (usize, usize, usize) {
        self.calls += 1;
        let (mut s, mut a, mut b) = self.draw_nu0();
        for _ in 0..self.continuations(self.cap) {
            s = self.transition(s, a, b);
            a = self.draw(pi1.row(s));
            b = self.draw(pi2.row(s));
        }
        (s, a, b)
    }

    /// Undiscounted return of a geometrically stopped rollout from `(s, a, b)`;
    /// unbiased for `Q^{pi1,pi2}(s, a, b)` up to the horizon cap.
    pub fn estimate_q(
        &mut self,
        pi1: &TabularPolicy,
        pi2: &TabularPolicy,
        s: usize,
        a: usize,
        b: usize,
    ) -> f64 {
        self.calls += 1;
        let (mut s, mut a, mut b) = (s, a, b);
        let mut total = self.game.reward(s, a, b);
        for _ in 0..self.continuations(self.cap - 1) {
            s = self.transition(s, a, b);
            a = self.draw(pi1.row(s));
            b = self.draw(pi2.row(s));
            total += self.game.reward(s, a, b);
        }
        total
    }
}

/// Radius, sample counts and step sizes of the projected-SGD fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    /// `W`: every fitted direction satisfies `|w|_2 <= W`.
    pub radius: f64,
    /// `N`: SGD steps per iteration-step fit.
    pub n: usize,
    /// `N'`: SGD steps per greedy-step fit (each player).
    pub n_prime: usize,
    /// Overrides `eta = sqrt(2 log|A| / (beta W^2 T))`.
    #[serde(default)]
    pub eta: Option<f64>,
    /// Overrides `eta' = sqrt(2 log|A| / (beta W^2 T'))`.
    #[serde(default)]
    pub eta_prime: Option<f64>,
}

impl SgdConfig {
    /// `W = 1/(1 - gamma)`, the scale of action values.
    pub fn new(gamma: f64, n: usize, n_prime: usize) -> Self {
        Self {
            radius: 1.0 / (1.0 - gamma),
            n,
            n_prime,
            eta: None,
            eta_prime: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::InvalidConfig(format!("radius W = {} must be positive", self.radius)));
        }
        if self.n == 0 || self.n_prime == 0 {
            return Err(Error::InvalidConfig("N and N' must be positive".into()));
        }
        for (name, eta) in [("eta", self.eta), ("eta'", self.eta_prime)] {
            if let Some(e) = eta {
                if !(e >= 0.0) || !e.is_finite() {
                    return Err(Error::InvalidConfig(format!("{name} = {e} must be non-negative")));
                }
            }
        }
        Ok(())
    }

    /// `G = 2B(BW + 2/(1 - gamma))`.
    pub fn grad_bound(&self, b: f64, gamma: f64) -> f64 {
        2.0 * b * (b * self.radius + 2.0 / (1.0 - gamma))
    }

    /// `alpha = W / (G sqrt(N))`.
    pub fn alpha(&self, b: f64, gamma: f64) -> f64 {
        sgd_rate(self.radius, self.grad_bound(b, gamma), self.n)
    }

    /// `alpha' = W / (G sqrt(N'))`.
    pub fn alpha_prime(&self, b: f64, gamma: f64) -> f64 {
        sgd_rate(self.radius, self.grad_bound(b, gamma), self.n_prime)
    }

    pub fn eta_for(&self, n_actions: usize, beta: f64, t: usize) -> f64 {
        self.eta
            .unwrap_or_else(|| npg_rate(n_actions, beta, self.radius, t))
    }

    pub fn eta_prime_for(&self, n_actions: usize, beta: f64, t_prime: usize) -> f64 {
        self.eta_prime
            .unwrap_or_else(|| npg_rate(n_actions, beta, self.radius, t_prime))
    }
}

fn sgd_rate(w: f64, g: f64, n: usize) -> f64 {
    if g > 0.0 {
        w / (g * (n as f64).sqrt())
    } else {
        0.0
    }
}

fn npg_rate(n_actions: usize, beta: f64, w: f64, t: usize) -> f64 {
    let num = 2.0 * (n_actions as f64).ln();
    let den = beta * w * w * t as f64;
    if num > 0.0 && den > 0.0 {
        (num / den).sqrt()
    } else {
        0.0
    }
}

/// Result of one projected-SGD fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdFit {
    /// `(1/N) sum_{n=1}^N w_n`.
    pub w_hat: Vec<f64>,
    /// Largest `|grad_n| / (2B(BW + 2 max(|y_n|, 1/(1-gamma))))`; at most 1.
    pub max_grad_ratio: f64,
    /// Largest sampled gradient norm among samples with `|y_n| <= 1/(1-gamma)`,
    /// where the bound `G` applies directly.
    pub max_grad_norm_in_range: f64,
}

struct Psgd {
    w: Vec<f64>,
    sum: Vec<f64>,
    radius: f64,
    alpha: f64,
    b: f64,
    horizon: f64,
    steps: usize,
    max_ratio: f64,
    max_in_range: f64,
}

impl Psgd {
    fn new(dim: usize, radius: f64, alpha: f64, b: f64, gamma: f64) -> Self {
        Self {
            w: vec![0.0; dim],
            sum: vec![0.0; dim],
            radius,
            alpha,
            b,
            horizon: 1.0 / (1.0 - gamma),
            steps: 0,
            max_ratio: 0.0,
            max_in_range: 0.0,
        }
    }

    /// `w <- Proj[w - 2 alpha ((w^T psi) psi - y delta)]`.
    #[inline]
    fn step(&mut self, psi: &[f64], delta: &[f64], y: f64) {
        let wpsi = dot(&self.w, psi);
        let mut g2 = 0.0;
        for ((w, p), d) in self.w.iter_mut().zip(psi).zip(delta) {
            let g = 2.0 * (wpsi * p - y * d);
            g2 += g * g;
            *w -= self.alpha * g;
        }
        project_ball(&mut self.w, self.radius);
        axpy(&mut self.sum, 1.0, &self.w);
        self.steps += 1;
        let g = g2.sqrt();
        let bound = 2.0 * self.b * (self.b * self.radius + 2.0 * y.abs().max(self.horizon));
        if bound > 0.0 {
            self.max_ratio = self.max_ratio.max(g / bound);
        }
        if y.abs() <= self.horizon {
            self.max_in_range = self.max_in_range.max(g);
        }
    }

    fn finish(mut self) -> SgdFit {
        let n = self.steps.max(1) as f64;
        self.sum.iter_mut().for_each(|x| *x /= n);
        project_ball(&mut self.sum, self.radius);
        SgdFit {
            w_hat: self.sum,
            max_grad_ratio: self.max_ratio,
            max_grad_norm_in_range: self.max_in_range,
        }
    }
}

/// Euclidean projection onto `{|w|_2 <= r}`, exact in floating point.
pub fn project_ball(w: &mut [f64], r: f64) {
    let n = norm(w);
    if n <= r {
        return;
    }
    let scale = r / n;
    w.iter_mut().for_each(|x| *x *= scale);
    while norm(w) > r {
        w.iter_mut().for_each(|x| *x *= 1.0 - f64::EPSILON);
    }
}

/// `N` projected-SGD steps on the compatible loss of the min player against
/// fixed `pi1`: tuples from `nu^t`, Monte Carlo `Q`, independent `b'`.
pub fn sgd_npg_direction(
    oracle: &mut SamplingOracle<'_>,
    pi1: &TabularPolicy,
    pi2: &LogLinearPolicy,
    cfg: &SgdConfig,
) -> Result<SgdFit> {
    cfg.validate()?;
    let game = oracle.game();
    let features = Arc::clone(pi2.features());
    features.check_game(game)?;
    game.check_policy(pi1, "max player")?;
    let table = pi2.table();
    let b = features.score_bound();
    let mut sgd = Psgd::new(
        features.dim(),
        cfg.radius,
        cfg.alpha(b, game.gamma()),
        b,
        game.gamma(),
    );
    let mut psi = vec![0.0; features.dim()];
    let mut delta = vec![0.0; features.dim()];
    for _ in 0..cfg.n {
        let (s, a, bb) = oracle.sample_state_action_visitation(pi1, &table.pi);
        let y = oracle.estimate_q(pi1, &table.pi, s, a, bb);
        let b2 = oracle.draw(table.pi.row(s));
        table.score_into(&features, s, bb, &mut psi);
        diff_into(features.phi(s, bb), features.phi(s, b2), &mut delta);
        sgd.step(&psi, &delta, y);
    }
    Ok(sgd.finish())
}

/// One sampled SGD gradient `2((w^T psi) psi - g_n)` at `w`.
pub fn sgd_gradient_sample(
    oracle: &mut SamplingOracle<'_>,
    pi1: &TabularPolicy,
    pi2: &LogLinearPolicy,
    w: &[f64],
) -> Vec<f64> {
    let features = pi2.features();
    let table = pi2.table();
    let (s, a, b) = oracle.sample_state_action_visitation(pi1, &table.pi);
    let y = oracle.estimate_q(pi1, &table.pi, s, a, b);
    let b2 = oracle.draw(table.pi.row(s));
    let psi = pi2.score(s, b);
    let wpsi = dot(w, &psi);
    psi.iter()
        .zip(features.phi(s, b).iter().zip(features.phi(s, b2)))
        .map(|(p, (x, z))| 2.0 * (wpsi * p - y * (x - z)))
        .collect()
}

/// Exact `nu^{pi1,pi2}_{nu0}(s, a, b) = (1-gamma) nu0 + gamma d_mu(s) pi1(a|s) pi2(b|s)`,
/// where `mu` is the law of the first successor state.
pub fn state_action_visitation(
    game: &MarkovGame,
    nu0: &[f64],
    pi1: &TabularPolicy,
    pi2: &TabularPolicy,
) -> Result<Vec<f64>> {
    let (ns, na) = (game.n_states(), game.n_actions());
    if nu0.len() != ns * na * na {
        return Err(Error::Dimension("nu0 has the wrong length".into()));
    }
    let gamma = game.gamma();
    let mut mu = vec![0.0; ns];
    for (i, w) in nu0.iter().enumerate() {
        if *w > 0.0 {
            let (s, a, b) = (i / (na * na), (i / na) % na, i % na);
            axpy(&mut mu, *w, game.next_dist(s, a, b));
        }
    }
    let d = visitation(game, pi1, pi2, &StateDist::normalized(mu)?)?;
    let mut nu: Vec<f64> = nu0.iter().map(|w| (1.0 - gamma) * w).collect();
    for s in 0..ns {
        for a in 0..na {
            for b in 0..na {
                nu[(s * na + a) * na + b] += gamma * d.as_slice()[s] * pi1.prob(s, a) * pi2.prob(s, b);
            }
        }
    }
    Ok(nu)
}

/// Exact quadratic `L(w) = w^T H w - 2 c^T w + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompatibleLoss {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub k: f64,
}

impl CompatibleLoss {
    /// `L(w) = E_{(s,a,b)~nu^t} (w^T grad log pi2(b|s) - Q(s,a,b))^2`, the loss
    /// whose gradient the SGD samples estimate without bias.
    pub fn q_target(
        game: &MarkovGame,
        nu0: &[f64],
        pi1: &TabularPolicy,
        pi2: &LogLinearPolicy,
    ) -> Result<Self> {
        let target = q_and_advantage(game, pi1, &pi2.to_tabular())?;
        Self::build(game, nu0, pi1, pi2, |s, a, b| target.q(s, a, b))
    }

    /// Same weighting with the advantage as the regression target.
    pub fn advantage_target(
        game: &MarkovGame,
        nu0: &[f64],
        pi1: &TabularPolicy,
        pi2: &LogLinearPolicy,
    ) -> Result<Self> {
        let target = q_and_advantage(game, pi1, &pi2.to_tabular())?;
        Self::build(game, nu0, pi1, pi2, |s, a, b| target.advantage(s, a, b))
    }

    fn build(
        game: &MarkovGame,
        nu0: &[f64],
        pi1: &TabularPolicy,
        pi2: &LogLinearPolicy,
        target: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        pi2.features().check_game(game)?;
        let (ns, na, d) = (game.n_states(), game.n_actions(), pi2.features().dim());
        let nu = state_action_visitation(game, nu0, pi1, &pi2.to_tabular())?;
        let mut h = DMatrix::zeros(d, d);
        let mut c = DVector::zeros(d);
        let mut k = 0.0;
        for s in 0..ns {
            for b in 0..na {
                let psi = DVector::from_vec(pi2.score(s, b));
                let mut wsum = 0.0;
                for a in 0..na {
                    let w = nu[(s * na + a) * na + b];
                    let y = target(s, a, b);
                    wsum += w;
                    c.axpy(w * y, &psi, 1.0);
                    k += w * y * y;
                }
                h.ger(wsum, &psi, &psi, 1.0);
            }
        }
        Ok(Self { h, c, k })
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let w = DVector::from_column_slice(w);
        (w.transpose() * &self.h * &w)[0] - 2.0 * self.c.dot(&w) + self.k
    }

    /// `grad L(w) = 2(H w - c)`.
    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let w = DVector::from_column_slice(w);
        ((&self.h * &w - &self.c) * 2.0).as_slice().to_vec()
    }

    /// `argmin_{|w| <= radius} L(w)` and its value.
    pub fn minimize_in_ball(&self, radius: f64) -> (Vec<f64>, f64) {
        let eig = SymmetricEigen::new(self.h.clone());
        let ct = eig.eigenvectors.transpose() * &self.c;
        let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        let floor = 1e-12 * top.max(f64::MIN_POSITIVE);
        let coords = |mu: f64| -> DVector<f64> {
            DVector::from_iterator(
                ct.len(),
                ct.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| {
                    if *l > floor {
                        c / (l + mu)
                    } else if mu > 0.0 {
                        c / mu
                    } else {
                        0.0
                    }
                }),
            )
        };
        let mut z = coords(0.0);
        if z.norm() > radius {
            // |z(mu)| decreases in mu; bisect for |z(mu)| = radius
            let (mut lo, mut hi) = (0.0, 1.0);
            while coords(hi).norm() > radius {
                hi *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if coords(mid).norm() > radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            z = coords(hi);
        }
        let mut w = (&eig.eigenvectors * z).as_slice().to_vec();
        project_ball(&mut w, radius);
        let v = self.value(&w);
        (w, v)
    }
}

/// Outer loop settings for online NPG.
#[derive(Debug, Clone)]
pub struct OnlineConfig {
    pub k: usize,
    pub t: usize,
    pub t_prime: usize,
    pub sgd: SgdConfig,
    pub features: Arc<FeatureMap>,
    pub sigma: StateDist,
    pub rho: StateDist,
    /// Keep every `trace_stride`-th iteration-step row (the last is always kept).
    pub trace_stride: usize,
}

impl OnlineConfig {
    /// Tabular indicator features, uniform `sigma` and `rho`.
    pub fn tabular(game: &MarkovGame, k: usize, t: usize, t_prime: usize, n: usize, n_prime: usize) -> Self {
        let ns = game.n_states();
        Self {
            k,
            t,
            t_prime,
            sgd: SgdConfig::new(game.gamma(), n, n_prime),
            features: Arc::new(FeatureMap::tabular(ns, game.n_actions())),
            sigma: StateDist::uniform(ns),
            rho: StateDist::uniform(ns),
            trace_stride: 1,
        }
    }

    pub fn validate(&self, game: &MarkovGame) -> Result<()> {
        self.sgd.validate()?;
        self.features.check_game(game)?;
        game.check_dist(&self.sigma, "sigma")?;
        game.check_dist(&self.rho, "rho")?;
        if self.t == 0 || self.t_prime == 0 {
            return Err(Error::InvalidConfig("T and T' must be positive".into()));
        }
        if self.trace_stride == 0 {
            return Err(Error::InvalidConfig("trace stride must be positive".into()));
        }
        Ok(())
    }

    /// Exact oracle budget `K (2 T N + 2 T' N')`.
    pub fn analytic_calls(&self) -> u64 {
        let per_k = 2 * self.t * self.sgd.n + 2 * self.t_prime * self.sgd.n_prime;
        (self.k * per_k) as u64
    }
}

/// Online greedy step output.
#[derive(Debug, Clone)]
pub struct OnlineGreedyOutput {
    pub mixture: MixturePolicy,
    /// Induced per-state distribution of the mixture.
    pub x_bar: TabularPolicy,
    pub f_bar: TabularPolicy,
    /// Exact duality gap of `(x_bar, f_bar)` on each stage matrix.
    pub per_state_gap: Vec<f64>,
    /// `max(sup_t sqrt|x*/x^t|_inf, sup_t sqrt|f*/f^t|_inf)`.
    pub iota: f64,
    pub max_grad_ratio: f64,
}

impl OnlineGreedyOutput {
    pub fn gap_max(&self) -> f64 {
        self.per_state_gap.iter().copied().fold(0.0, f64::max)
    }
}

/// `T'` rounds of simultaneous sample-based NPG on the stage games
/// `A_s = r + gamma P v_prev`; returns the uniform mixture of `x^1..x^{T'}`.
pub fn online_greedy_step(
    oracle: &mut SamplingOracle<'_>,
    v_prev: &[f64],
    cfg: &OnlineConfig,
    k: usize,
) -> Result<OnlineGreedyOutput> {
    let game = oracle.game();
    cfg.validate(game)?;
    let (ns, na, gamma) = (game.n_states(), game.n_actions(), game.gamma());
    if v_prev.len() != ns || v_prev.iter().any(|v| !v.is_finite()) {
        return Err(Error::Dimension("v_prev must be a finite vector over states".into()));
    }
    let features = Arc::clone(&cfg.features);
    let (d, b) = (features.dim(), features.score_bound());
    let alpha = cfg.sgd.alpha_prime(b, gamma);
    let eta = cfg.sgd.eta_prime_for(na, features.smoothness(), cfg.t_prime);
    let stages: Vec<_> = (0..ns).map(|s| backup_matrix(game, v_prev, s)).collect();
    let star: Vec<_> = stages
        .iter()
        .map(|m| matrix_game_solve(m, IOTA_SOLVER_TOL))
        .collect::<Result<_>>()?;

    let mut xi = LogLinearPolicy::zeros(Arc::clone(&features));
    let mut theta = LogLinearPolicy::zeros(Arc::clone(&features));
    let mut xs = Vec::with_capacity(cfg.t_prime);
    let mut f_sum = vec![0.0; ns * na];
    let mut iota2: f64 = 1.0;
    let mut max_ratio: f64 = 0.0;
    let (mut psi, mut delta) = (vec![0.0; d], vec![0.0; d]);
    for t in 1..=cfg.t_prime {
        let (xt, ft) = (xi.table(), theta.table());
        xs.push(xi.theta.clone());
        axpy(&mut f_sum, 1.0, ft.pi.probs());
        for (s, sol) in star.iter().enumerate() {
            for (p, q) in sol.row_strategy.iter().zip(xt.pi.row(s)) {
                iota2 = iota2.max(p / q);
            }
            for (p, q) in sol.col_strategy.iter().zip(ft.pi.row(s)) {
                iota2 = iota2.max(p / q);
            }
        }

        let mut fits = [Stream::GreedyMin, Stream::GreedyMax].map(|who| {
            oracle.stream(who, k, t);
            let mut sgd = Psgd::new(d, cfg.sgd.radius, alpha, b, gamma);
            for _ in 0..cfg.sgd.n_prime {
                oracle.calls += 1;
                let s = oracle.draw_state(cfg.sigma.as_slice());
                let a = oracle.draw(xt.pi.row(s));
                let bb = oracle.draw(ft.pi.row(s));
                let s2 = oracle.transition(s, a, bb);
                let y = game.reward(s, a, bb) + gamma * v_prev[s2];
                if who == Stream::GreedyMin {
                    let b2 = oracle.draw(ft.pi.row(s));
                    ft.score_into(&features, s, bb, &mut psi);
                    diff_into(features.phi(s, bb), features.phi(s, b2), &mut delta);
                } else {
                    let a2 = oracle.draw(xt.pi.row(s));
                    xt.score_into(&features, s, a, &mut psi);
                    diff_into(features.phi(s, a), features.phi(s, a2), &mut delta);
                }
                sgd.step(&psi, &delta, y);
            }
            sgd.finish()
        });
        let [fit_min, fit_max] = &mut fits;
        max_ratio = max_ratio.max(fit_min.max_grad_ratio).max(fit_max.max_grad_ratio);
        axpy(&mut theta.theta, -eta, &fit_min.w_hat);
        axpy(&mut xi.theta, eta, &fit_max.w_hat);
    }

    let mixture = MixturePolicy {
        features,
        params: xs,
    };
    let x_bar = mixture.induced();
    normalize_rows(&mut f_sum, na);
    let f_bar = TabularPolicy::from_probs(ns, na, f_sum)?;
    let per_state_gap = stages
        .iter()
        .enumerate()
        .map(|(s, m)| m.duality_gap(x_bar.row(s), f_bar.row(s)))
        .collect();
    Ok(OnlineGreedyOutput {
        mixture,
        x_bar,
        f_bar,
        per_state_gap,
        iota: iota2.sqrt(),
        max_grad_ratio: max_ratio,
    })
}

/// Online iteration step output.
#[derive(Debug, Clone)]
pub struct OnlineIterationOutput {
    /// `pi2^t` for the drawn `t`.
    pub pi2: LogLinearPolicy,
    pub selected: usize,
    /// Parameters `theta^(0..T)`.
    pub trajectory: Vec<Vec<f64>>,
    /// Exact `V^{pi1,pi2^t}(sigma) - inf_{pi2} V^{pi1,pi2}(sigma)` for `t = 0..T`.
    pub subopt: Vec<f64>,
    pub best_response_value: f64,
    pub max_grad_ratio: f64,
    /// Oracle calls used before each fit, for `t = 0..T`.
    pub calls_before: Vec<u64>,
}

/// `T` rounds of `theta <- theta - eta w_hat` from `theta = 0`, then a uniform
/// draw among `pi2^0..pi2^{T-1}`.
pub fn online_iteration_step(
    oracle: &mut SamplingOracle<'_>,
    pi1: &TabularPolicy,
    cfg: &OnlineConfig,
    k: usize,
) -> Result<OnlineIterationOutput> {
    let game = oracle.game();
    cfg.validate(game)?;
    game.check_policy(pi1, "max player")?;
    let features = Arc::clone(&cfg.features);
    let eta = cfg
        .sgd
        .eta_for(game.n_actions(), features.smoothness(), cfg.t);
    let br = best_response_min(game, pi1)?;
    let br_value = br.value.at(&cfg.sigma);

    let mut pi2 = LogLinearPolicy::zeros(features);
    let mut trajectory = Vec::with_capacity(cfg.t + 1);
    let mut subopt = Vec::with_capacity(cfg.t);
    let mut calls_before = Vec::with_capacity(cfg.t);
    let mut max_ratio: f64 = 0.0;
    for t in 0..cfg.t {
        trajectory.push(pi2.theta.clone());
        let v = evaluate_value(game, pi1, &pi2.to_tabular())?;
        subopt.push(v.at(&cfg.sigma) - br_value);
        calls_before.push(oracle.calls());
        oracle.stream(Stream::Iteration, k, t);
        let fit = sgd_npg_direction(oracle, pi1, &pi2, &cfg.sgd)?;
        max_ratio = max_ratio.max(fit.max_grad_ratio);
        axpy(&mut pi2.theta, -eta, &fit.w_hat);
    }
    trajectory.push(pi2.theta.clone());

    oracle.stream(Stream::Select, k, 0);
    let selected = oracle.rng.random_range(0..cfg.t);
    let pi2 = LogLinearPolicy::from_params(Arc::clone(pi2.features()), trajectory[selected].clone())?;
    Ok(OnlineIterationOutput {
        pi2,
        selected,
        trajectory,
        subopt,
        best_response_value: br_value,
        max_grad_ratio: max_ratio,
        calls_before,
    })
}

/// One row of the online trace (one per kept iteration-step round).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineTraceRow {
    pub k: usize,
    pub t: usize,
    pub n_samples_used: u64,
    pub exploitability: f64,
    pub subopt_sigma: f64,
    pub greedy_gap: f64,
    pub seed: u64,
}

pub const ONLINE_TRACE_HEADER: &str = "k,t,n_samples_used,exploitability,subopt_sigma,greedy_gap,seed";

impl OnlineTraceRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.12e},{:.12e},{:.12e},{}",
            self.k, self.t, self.n_samples_used, self.exploitability, self.subopt_sigma, self.greedy_gap, self.seed
        )
    }
}

/// Per-outer-iteration summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineOuterRow {
    pub k: usize,
    pub exploitability: f64,
    pub greedy_gap: f64,
    pub iota: f64,
    pub selected_t: usize,
    pub n_samples_used: u64,
    pub env_steps: u64,
    pub v_k: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct OnlineOutput {
    pub pi1: TabularPolicy,
    pub pi1_mixture: MixturePolicy,
    pub pi2: LogLinearPolicy,
    pub trace: Vec<OnlineTraceRow>,
    pub outer: Vec<OnlineOuterRow>,
}

impl OnlineOutput {
    pub fn final_exploitability(&self) -> f64 {
        self.outer.last().map_or(f64::NAN, |r| r.exploitability)
    }
}

pub fn run_online_npg(oracle: &mut SamplingOracle<'_>, cfg: &OnlineConfig) -> Result<OnlineOutput> {
    let meter = ExploitabilityMeter::new(oracle.game(), DEFAULT_ORACLE_TOL)?;
    run_online_npg_with(oracle, cfg, &meter)
}

/// `V_0 = 0`; per outer step: online greedy step, online iteration step,
/// `V_k = V^{pi1^k, pi2}` evaluated exactly.
pub fn run_online_npg_with(
    oracle: &mut SamplingOracle<'_>,
    cfg: &OnlineConfig,
    meter: &ExploitabilityMeter,
) -> Result<OnlineOutput> {
    let game = oracle.game();
    cfg.validate(game)?;
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("K must be positive".into()));
    }
    let mut v = vec![0.0; game.n_states()];
    let mut trace = Vec::new();
    let mut outer = Vec::with_capacity(cfg.k);
    let mut last = None;
    for k in 1..=cfg.k {
        let greedy = online_greedy_step(oracle, &v, cfg, k)?;
        let iter = online_iteration_step(oracle, &greedy.x_bar, cfg, k)?;
        v = evaluate_value(game, &greedy.x_bar, &iter.pi2.to_tabular())?.values;
        let expl = meter.exploitability(&greedy.x_bar, &cfg.rho)?;
        for (t, (sub, calls)) in iter.subopt.iter().zip(&iter.calls_before).enumerate() {
            if t % cfg.trace_stride == 0 || t + 1 == cfg.t {
                trace.push(OnlineTraceRow {
                    k,
                    t,
                    n_samples_used: *calls,
                    exploitability: expl,
                    subopt_sigma: *sub,
                    greedy_gap: greedy.gap_max(),
                    seed: oracle.seed(),
                });
            }
        }
        outer.push(OnlineOuterRow {
            k,
            exploitability: expl,
            greedy_gap: greedy.gap_max(),
            iota: greedy.iota,
            selected_t: iter.selected,
            n_samples_used: oracle.calls(),
            env_steps: oracle.env_steps(),
            v_k: v.clone(),
        });
        last = Some((greedy, iter));
    }
    let (greedy, iter) = last.expect("K >= 1");
    Ok(OnlineOutput {
        pi1: greedy.x_bar,
        pi1_mixture: greedy.mixture,
        pi2: iter.pi2,
        trace,
        outer,
    })
}

/// Inverse-CDF draw; branch-free over the row, zero-mass entries never win.
#[inline]
fn pick(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut idx = 0;
    for p in &row[..row.len() - 1] {
        acc += p;
        idx += usize::from(u >= acc);
    }
    if row[idx] > 0.0 {
        idx
    } else {
        row.iter().rposition(|p| *p > 0.0).unwrap_or(idx)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
fn diff_into(x: &[f64], z: &[f64], out: &mut [f64]) {
    for ((o, a), b) in out.iter_mut().zip(x).zip(z) {
        *o = a - b;
    }
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn normalize_rows(probs: &mut [f64], na: usize) {
    for row in probs.chunks_mut(na) {
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
    }
}
