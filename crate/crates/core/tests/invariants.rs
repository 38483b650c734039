use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use zsnpg::coefficients::{concentrability, concentrability_by_enumeration, sampled_lower_bound};
use zsnpg::game::{
    bellman_apply, evaluate_value, policy_gradient_min, BellmanMode, GradientForm, MarkovGame, StateDist,
    TabularPolicy,
};
use zsnpg::harness::random_game;
use zsnpg::matrix::PayoffMatrix;
use zsnpg::omd::{run_omd, GreedyMatrixSet, OmdConfig};
use zsnpg::online::{
    project_ball, sgd_npg_direction, FeatureMap, LogLinearPolicy, SamplingOracle, SgdConfig,
};
use zsnpg::oracle::{best_response_min, exploitability, matrix_game_solve, shapley_value_iteration};
use zsnpg::population::{fisher_npg_update_check, iteration_step, IterationConfig};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn policy(ns: usize, na: usize, r: &mut ChaCha8Rng) -> TabularPolicy {
    let w: Vec<f64> = (0..ns * na).map(|_| Exp1.sample(r)).collect();
    TabularPolicy::from_weights(ns, na, w).unwrap()
}

fn logits(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-3.0..3.0)).collect()
}

fn dist(n: usize, r: &mut ChaCha8Rng) -> StateDist {
    StateDist::normalized((0..n).map(|_| 0.1 + Distribution::<f64>::sample(&Exp1, r)).collect()).unwrap()
}

fn game(seed: u64, ns: usize, na: usize, gamma: f64) -> MarkovGame {
    random_game(ns, na, gamma, seed).unwrap()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bellman_modes_contract(seed in any::<u64>(), ns in 1usize..4, na in 1usize..4, gamma in 0.0f64..0.99) {
        let g = game(seed, ns, na, gamma);
        let mut r = rng(seed);
        let (p1, p2) = (policy(ns, na, &mut r), policy(ns, na, &mut r));
        let v1: Vec<f64> = (0..ns).map(|_| r.random_range(-10.0..10.0)).collect();
        let v2: Vec<f64> = (0..ns).map(|_| r.random_range(-10.0..10.0)).collect();
        for mode in [BellmanMode::Joint(&p1, &p2), BellmanMode::MaxPlayerFixed(&p1), BellmanMode::Full] {
            let t1 = bellman_apply(&g, &v1, mode).unwrap();
            let t2 = bellman_apply(&g, &v2, mode).unwrap();
            prop_assert!(sup(&t1.values, &t2.values) <= gamma * sup(&v1, &v2) + 1e-10);
        }
    }

    #[test]
    fn evaluation_is_a_fixed_point(seed in any::<u64>(), ns in 1usize..4, na in 1usize..4, gamma in 0.0f64..0.99) {
        let g = game(seed, ns, na, gamma);
        let mut r = rng(seed ^ 1);
        let (p1, p2) = (policy(ns, na, &mut r), policy(ns, na, &mut r));
        let v = evaluate_value(&g, &p1, &p2).unwrap();
        let tv = bellman_apply(&g, &v.values, BellmanMode::Joint(&p1, &p2)).unwrap();
        prop_assert!(sup(&tv.values, &v.values) <= 1e-10);
    }

    #[test]
    fn gradient_ignores_baseline(seed in any::<u64>(), ns in 1usize..4, na in 2usize..4) {
        let g = game(seed, ns, na, 0.8);
        let mut r = rng(seed ^ 2);
        let p1 = policy(ns, na, &mut r);
        let p2 = TabularPolicy::from_logits(ns, na, logits(ns * na, &mut r)).unwrap();
        let sigma = dist(ns, &mut r);
        let a = policy_gradient_min(&g, &p1, &p2, &sigma, GradientForm::Advantage).unwrap();
        let q = policy_gradient_min(&g, &p1, &p2, &sigma, GradientForm::ActionValue).unwrap();
        prop_assert!(sup(&a, &q) <= 1e-10);
    }

    #[test]
    fn value_matches_visitation_average(seed in any::<u64>(), ns in 1usize..4, na in 1usize..4, gamma in 0.0f64..0.99) {
        let g = game(seed, ns, na, gamma);
        let mut r = rng(seed ^ 3);
        let (p1, p2) = (policy(ns, na, &mut r), policy(ns, na, &mut r));
        let sigma = dist(ns, &mut r);
        let d = zsnpg::game::visitation(&g, &p1, &p2, &sigma).unwrap();
        let mut total = 0.0;
        for s in 0..ns {
            for a in 0..na {
                for b in 0..na {
                    total += d.as_slice()[s] * p1.prob(s, a) * p2.prob(s, b) * g.reward(s, a, b);
                }
            }
        }
        let v = evaluate_value(&g, &p1, &p2).unwrap().at(&sigma);
        prop_assert!((v - total / (1.0 - gamma)).abs() <= 1e-10);
    }

    #[test]
    fn matrix_certificate_is_exact(seed in any::<u64>(), m in 1usize..5, n in 1usize..5) {
        let mut r = rng(seed);
        let data: Vec<f64> = (0..m * n).map(|_| r.random_range(-1.0..1.0)).collect();
        let a = PayoffMatrix::new(m, n, data).unwrap();
        let sol = matrix_game_solve(&a, 1e-9).unwrap();
        prop_assert!((a.duality_gap(&sol.row_strategy, &sol.col_strategy) - sol.duality_gap).abs() <= 1e-12);
        prop_assert!(sol.duality_gap <= 1e-9);
    }

    #[test]
    fn nash_inequalities_and_lower_envelope(seed in any::<u64>(), ns in 1usize..4, na in 2usize..4) {
        let tol = 1e-9;
        let g = game(seed, ns, na, 0.8);
        let cert = shapley_value_iteration(&g, tol).unwrap();
        let rho = StateDist::uniform(ns);
        let vstar = cert.v_star.at(&rho);
        let br = best_response_min(&g, &cert.pi1_star).unwrap();
        let mut r = rng(seed ^ 4);
        for _ in 0..100 {
            let dev = policy(ns, na, &mut r);
            prop_assert!(evaluate_value(&g, &dev, &cert.pi2_star).unwrap().at(&rho) <= vstar + 2.0 * tol);
            let v = evaluate_value(&g, &cert.pi1_star, &dev).unwrap();
            prop_assert!(v.at(&rho) >= vstar - 2.0 * tol);
            for s in 0..ns {
                prop_assert!(v.values[s] >= br.value.values[s] - 1e-8);
            }
        }
        let pi1 = policy(ns, na, &mut r);
        prop_assert!(exploitability(&g, &pi1, &rho).unwrap() >= -2.0 * tol);
    }

    #[test]
    fn omd_sandwich_regret_and_mixing(seed in any::<u64>(), ns in 1usize..4, na in 1usize..4, t_prime in 1usize..300) {
        let mut r = rng(seed);
        let matrices: Vec<PayoffMatrix> = (0..ns)
            .map(|_| PayoffMatrix::new(na, na, (0..na * na).map(|_| r.random_range(0.0..1.0)).collect()).unwrap())
            .collect();
        let set = GreedyMatrixSet::from_matrices(matrices, 0.5).unwrap();
        let cfg = OmdConfig::new(t_prime);
        let out = run_omd(&set, &cfg).unwrap();
        for (s, m) in set.matrices().iter().enumerate() {
            let (x, f) = (out.x_bar.row(s), out.f_bar.row(s));
            prop_assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12 && x.iter().all(|p| *p >= 0.0));
            prop_assert!((f.iter().sum::<f64>() - 1.0).abs() < 1e-12 && f.iter().all(|p| *p >= 0.0));
            let value = matrix_game_solve(m, 1e-10).unwrap().value;
            let (lo, hi) = m.best_response_bounds(x, f);
            prop_assert!(lo <= value + 1e-10 && value <= hi + 1e-10);
            let d = &out.diagnostics.per_state[s];
            prop_assert!(value - lo <= (d.regret_x + d.regret_f) / t_prime as f64 + 1e-10);
            prop_assert!(d.min_secondary >= cfg.beta() / na as f64 * (1.0 - 1e-12));
        }
    }

    #[test]
    fn iteration_step_rate_bound(seed in any::<u64>(), ns in 1usize..4, na in 2usize..4, t in 1usize..200) {
        let gamma = 0.7;
        let g = game(seed, ns, na, gamma);
        let pi1 = policy(ns, na, &mut rng(seed ^ 5));
        let eta = (1.0 - gamma) * (1.0 - gamma) * (na as f64).ln();
        let out = iteration_step(&g, &pi1, &IterationConfig::new(t, eta, 0.0, StateDist::uniform(ns))).unwrap();
        let t = t as f64;
        let bound = (na as f64).ln() / (eta * t) + 1.0 / ((1.0 - gamma).powi(2) * t);
        prop_assert!(out.suboptimality <= bound);
        prop_assert!(out.suboptimality >= -1e-9);
    }

    #[test]
    fn fisher_step_matches_closed_form(seed in any::<u64>(), ns in 1usize..4, na in 2usize..4) {
        let g = game(seed, ns, na, 0.8);
        let mut r = rng(seed ^ 6);
        let p1 = policy(ns, na, &mut r);
        let p2 = TabularPolicy::from_logits(ns, na, logits(ns * na, &mut r)).unwrap();
        let check = fisher_npg_update_check(&g, &p1, &p2, 0.05, &dist(ns, &mut r)).unwrap();
        prop_assert!(check.max_deviation <= 1e-6);
    }

    #[test]
    fn score_identity_and_smoothness(seed in any::<u64>(), ns in 1usize..4, na in 1usize..4) {
        let features = Arc::new(FeatureMap::tabular(ns, na));
        let beta = features.smoothness();
        let mut r = rng(seed);
        for _ in 0..40 {
            let th = LogLinearPolicy::from_params(Arc::clone(&features), logits(features.dim(), &mut r)).unwrap();
            let th2v = logits(features.dim(), &mut r);
            let th2 = LogLinearPolicy::from_params(Arc::clone(&features), th2v.clone()).unwrap();
            let s = r.random_range(0..ns);
            let probs = th.probs_at(s);
            let mut mean = vec![0.0; features.dim()];
            for a in 0..na {
                for (m, x) in mean.iter_mut().zip(th.score(s, a)) {
                    *m += probs[a] * x;
                }
            }
            prop_assert!(mean.iter().all(|m| m.abs() <= 1e-10));
            let a = r.random_range(0..na);
            let diff: Vec<f64> = th2v.iter().zip(th.params()).map(|(x, y)| x - y).collect();
            let lin: f64 = th.score(s, a).iter().zip(&diff).map(|(g, d)| g * d).sum();
            let gap = (th2.log_prob(s, a) - th.log_prob(s, a) - lin).abs();
            let sq: f64 = diff.iter().map(|d| d * d).sum();
            prop_assert!(gap <= 0.5 * beta * sq + 1e-12);
        }
    }

    #[test]
    fn projection_contract(seed in any::<u64>(), n in 1usize..10, radius in 0.0f64..5.0) {
        let mut r = rng(seed);
        let mut w: Vec<f64> = (0..n).map(|_| r.random_range(-10.0..10.0)).collect();
        let before = w.clone();
        project_ball(&mut w, radius);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(norm <= radius);
        if before.iter().map(|x| x * x).sum::<f64>().sqrt() <= radius {
            prop_assert_eq!(w, before);
        }
    }

    #[test]
    fn sgd_fit_respects_radius_and_gradient_bound(seed in any::<u64>(), ns in 1usize..3, na in 2usize..4, n in 1usize..200) {
        let gamma = 0.8;
        let g = game(seed, ns, na, gamma);
        let mut r = rng(seed ^ 7);
        let pi1 = policy(ns, na, &mut r);
        let features = Arc::new(FeatureMap::tabular(ns, na));
        let pi2 = LogLinearPolicy::from_params(Arc::clone(&features), logits(features.dim(), &mut r)).unwrap();
        let cfg = SgdConfig::new(gamma, n, n);
        let mut oracle = SamplingOracle::with_sigma(&g, &StateDist::uniform(ns), seed).unwrap();
        let fit = sgd_npg_direction(&mut oracle, &pi1, &pi2, &cfg).unwrap();
        prop_assert!(fit.w_hat.iter().map(|x| x * x).sum::<f64>().sqrt() <= cfg.radius);
        prop_assert!(fit.max_grad_ratio <= 1.0);
        prop_assert!(fit.max_grad_norm_in_range <= cfg.grad_bound(features.score_bound(), gamma));
        prop_assert_eq!(oracle.calls(), 2 * n as u64);
    }

    #[test]
    fn truncation_brackets_nest(seed in any::<u64>(), ns in 1usize..4, na in 1usize..3, gamma in 0.1f64..0.95) {
        let g = game(seed, ns, na, gamma);
        let mut r = rng(seed ^ 8);
        let (rho, sigma) = (dist(ns, &mut r), dist(ns, &mut r));
        let mut prev: Option<(f64, f64)> = None;
        for depth in [0usize, 1, 3, 10, 40] {
            let (lo, hi) = concentrability(&g, &rho, &sigma, depth, &[]).unwrap().c_prime_bracket();
            prop_assert!(lo <= hi);
            if let Some((plo, phi)) = prev {
                prop_assert!(lo >= plo - 1e-12 && hi <= phi + 1e-9);
            }
            prev = Some((lo, hi));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn enumeration_dominates_sampling(seed in any::<u64>(), j in 0usize..3) {
        let g = game(seed, 2, 2, 0.9);
        let mut r = rng(seed ^ 9);
        let (rho, sigma) = (dist(2, &mut r), dist(2, &mut r));
        let exact = concentrability_by_enumeration(&g, &rho, &sigma, j).unwrap();
        let lower = sampled_lower_bound(&g, &rho, &sigma, j, 500, seed).unwrap();
        prop_assert!(lower <= exact + 1e-12);
    }
}
