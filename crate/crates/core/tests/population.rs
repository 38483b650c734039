use zsnpg::game::{StateDist, TabularPolicy};
use zsnpg::harness::{generate_game, GameKind};
use zsnpg::population::{default_eta, iteration_step, run_population_npg, IterationConfig, PopulationConfig};

fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> zsnpg::game::MarkovGame {
    generate_game(
        &GameKind::Random {
            n_states,
            n_actions,
            gamma,
        },
        seed,
    )
    .unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[test]
fn seeded_two_state_iteration_meets_rate() {
    let gamma = 0.9;
    let t = 2000;
    let g = random(2, 3, gamma, 11);
    let pi1 = TabularPolicy::uniform(2, 3);
    let eta = default_eta(gamma, 3);
    let cfg = IterationConfig::new(t, eta, 0.0, StateDist::uniform(2));
    let out = iteration_step(&g, &pi1, &cfg).unwrap();
    let bound = 2.0 / ((1.0 - gamma).powi(2) * t as f64) * 1.5;
    assert!(out.suboptimality >= -1e-10);
    assert!(out.suboptimality <= bound, "{} > {}", out.suboptimality, bound);
}

#[test]
fn smoke_run_has_finite_trace() {
    let g = random(2, 2, 0.9, 3);
    let out = run_population_npg(&g, &PopulationConfig::new(&g, 1, 1, 1)).unwrap();
    assert_eq!(out.trace.rows.len(), 1);
    let r = &out.trace.rows[0];
    assert!(r.exploitability_rho.is_finite() && r.exploitability_rho >= -1e-8);
    assert!(r.iter_subopt_sigma.is_finite());
}

#[test]
fn exploitability_trace_is_nonnegative() {
    for seed in 0..5 {
        let g = random(3, 2, 0.7, seed);
        let out = run_population_npg(&g, &PopulationConfig::new(&g, 4, 100, 100)).unwrap();
        assert!(out.trace.rows.iter().all(|r| r.exploitability_rho.is_finite() && r.exploitability_rho >= -1e-8));
    }
}

#[test]
fn joint_budget_doubling_shrinks_exploitability() {
    let (k, t, tp) = (4, 200, 200);
    let ratios = (0..10)
        .map(|seed| {
            let g = random(3, 3, 0.5, seed);
            let e = |k, t, tp| {
                run_population_npg(&g, &PopulationConfig::new(&g, k, t, tp))
                    .unwrap()
                    .final_exploitability()
            };
            e(2 * k, 2 * t, 2 * tp) / e(k, t, tp)
        })
        .collect::<Vec<_>>();
    let m = median(ratios);
    assert!(m <= 0.75, "median ratio {m}");
}
