use std::ffi::CStr;
use std::ptr;

use zsnpg_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(zs_last_error_message()) }.to_string_lossy().into_owned()
}

fn pennies(gamma: f64) -> *mut ZsGame {
    let reward = [1.0, 0.0, 0.0, 1.0];
    let transition = [1.0; 4];
    let mut g = ptr::null_mut();
    let st = unsafe { zs_game_new(1, 2, gamma, reward.as_ptr(), 4, transition.as_ptr(), 4, &mut g) };
    assert_eq!(st, ZsStatus::Ok, "{}", last_error());
    g
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(zs_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn game_shape_and_nash() {
    let g = pennies(0.9);
    let (mut s, mut a, mut gamma) = (0usize, 0usize, 0.0);
    unsafe {
        assert_eq!(zs_game_shape(g, &mut s, &mut a, &mut gamma), ZsStatus::Ok);
        assert_eq!((s, a, gamma), (1, 2, 0.9));
        let mut v = [0.0];
        let (mut p1, mut p2) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(zs_solve_nash(g, 1e-10, v.as_mut_ptr(), 1, &mut p1, &mut p2), ZsStatus::Ok);
        assert!((v[0] - 5.0).abs() < 1e-8, "{}", v[0]);
        let mut probs = [0.0; 2];
        assert_eq!(zs_policy_probs(p1, probs.as_mut_ptr(), 2), ZsStatus::Ok);
        assert!((probs[0] - 0.5).abs() < 1e-8);
        let rho = [1.0];
        let mut e = f64::NAN;
        assert_eq!(zs_exploitability(g, p1, rho.as_ptr(), 1, &mut e), ZsStatus::Ok);
        assert!(e.abs() < 1e-8);
        zs_policy_free(p1);
        zs_policy_free(p2);
        zs_game_free(g);
    }
}

#[test]
fn evaluate_and_best_response() {
    let g = pennies(0.5);
    unsafe {
        let probs = [0.8, 0.2];
        let mut pi1 = ptr::null_mut();
        assert_eq!(zs_policy_from_probs(1, 2, probs.as_ptr(), 2, &mut pi1), ZsStatus::Ok);
        let mut pi2 = ptr::null_mut();
        assert_eq!(zs_policy_uniform(1, 2, &mut pi2), ZsStatus::Ok);
        let mut v = [0.0];
        assert_eq!(zs_evaluate(g, pi1, pi2, v.as_mut_ptr(), 1), ZsStatus::Ok);
        assert!((v[0] - 1.0).abs() < 1e-12);
        let mut br = ptr::null_mut();
        assert_eq!(zs_best_response(g, pi1, v.as_mut_ptr(), 1, &mut br), ZsStatus::Ok);
        assert!((v[0] - 0.4).abs() < 1e-10, "{}", v[0]);
        let mut p = [0.0; 2];
        zs_policy_probs(br, p.as_mut_ptr(), 2);
        assert_eq!(p, [0.0, 1.0]);
        zs_policy_free(br);
        zs_policy_free(pi1);
        zs_policy_free(pi2);
        zs_game_free(g);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut g = ptr::null_mut();
        let reward = [0.0; 4];
        let bad = [0.5; 4];
        let st = zs_game_new(1, 2, 0.9, reward.as_ptr(), 4, bad.as_ptr(), 4, &mut g);
        assert_ne!(st, ZsStatus::Ok);
        assert!(g.is_null());
        assert!(!last_error().is_empty());

        let st = zs_game_new(1, 2, 0.9, ptr::null(), 4, bad.as_ptr(), 4, &mut g);
        assert_eq!(st, ZsStatus::NullPointer);

        let g = pennies(0.9);
        let mut v = [0.0; 3];
        let st = zs_solve_nash(g, 1e-8, v.as_mut_ptr(), 3, ptr::null_mut(), ptr::null_mut());
        assert_eq!(st, ZsStatus::Dimension);
        assert!(last_error().contains("buffer"));

        let mut s = 0;
        let mut a = 0;
        assert_eq!(zs_game_shape(g, &mut s, &mut a, ptr::null_mut()), ZsStatus::NullPointer);
        assert_eq!(zs_game_shape(ptr::null(), &mut s, &mut a, ptr::null_mut()), ZsStatus::NullPointer);

        let probs = [0.7, 0.7];
        let mut p = ptr::null_mut();
        assert_ne!(zs_policy_from_probs(1, 2, probs.as_ptr(), 2, &mut p), ZsStatus::Ok);

        let mut missing = ptr::null_mut();
        let path = c"/nonexistent/game.json";
        assert_eq!(zs_game_load(path.as_ptr(), &mut missing), ZsStatus::Io);
        zs_game_free(g);
        zs_game_free(ptr::null_mut());
        zs_policy_free(ptr::null_mut());
    }
}

#[test]
fn solvers_run_through_the_abi() {
    unsafe {
        let g = pennies(0.9);
        let mut pi1 = ptr::null_mut();
        let mut e = f64::NAN;
        assert_eq!(zs_run_population(g, 3, 200, 200, f64::NAN, 0.0, &mut pi1, &mut e), ZsStatus::Ok, "{}", last_error());
        assert!(e.is_finite() && e >= -1e-9 && e < 1.0);
        zs_policy_free(pi1);

        let mut r = ptr::null_mut();
        assert_eq!(zs_game_random(2, 2, 0.8, 7, &mut r), ZsStatus::Ok);
        let mut samples = 0u64;
        let mut pi1 = ptr::null_mut();
        let st = zs_run_online(r, 1, 3, 3, 10, 10, 1, &mut pi1, &mut e, &mut samples);
        assert_eq!(st, ZsStatus::Ok, "{}", last_error());
        assert!(e.is_finite());
        assert_eq!(samples, 2 * 3 * 10 + 2 * 3 * 10);
        zs_policy_free(pi1);
        zs_game_free(r);
        zs_game_free(g);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/zsnpg.h")).unwrap();
    for name in [
        "zs_last_error_message",
        "zs_version",
        "zs_game_new",
        "zs_game_load",
        "zs_game_random",
        "zs_game_free",
        "zs_game_shape",
        "zs_policy_uniform",
        "zs_policy_from_probs",
        "zs_policy_probs",
        "zs_policy_free",
        "zs_evaluate",
        "zs_solve_nash",
        "zs_best_response",
        "zs_exploitability",
        "zs_run_population",
        "zs_run_online",
        "ZS_STATUS_OK",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
