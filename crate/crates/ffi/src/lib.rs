//! C ABI over the `zsnpg` solvers.
//!
//! Every function returns a [`ZsStatus`]; on failure the thread-local message
//! from [`zs_last_error_message`] describes the cause. Handles are opaque and
//! released with their `_free` functions. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use zsnpg::game::{evaluate_value, GameFile, MarkovGame, StateDist, TabularPolicy};
use zsnpg::harness::random_game;
use zsnpg::online::{run_online_npg, OnlineConfig, SamplingOracle};
use zsnpg::oracle::{best_response_min, exploitability, shapley_value_iteration};
use zsnpg::population::{run_population_npg, PopulationConfig};
use zsnpg::Error;

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numerics = 4,
    Budget = 5,
    Io = 6,
    Panic = 7,
}

/// Opaque game handle.
pub struct ZsGame(MarkovGame);

/// Opaque tabular policy handle.
pub struct ZsPolicy(TabularPolicy);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ZsStatus {
    match e {
        Error::Dimension(_) => ZsStatus::Dimension,
        Error::Numerics(_) => ZsStatus::Numerics,
        Error::SolverBudget { .. } | Error::EnumerationBudget { .. } => ZsStatus::Budget,
        Error::Io(_) | Error::GameFile { .. } | Error::Json(_) => ZsStatus::Io,
        _ => ZsStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ZsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ZsStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            ZsStatus::NullPointer
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            ZsStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn game_ref<'a>(g: *const ZsGame) -> Result<&'a MarkovGame, Fail> {
    g.as_ref().map(|g| &g.0).ok_or(Fail::Null("game"))
}

unsafe fn policy_ref<'a>(p: *const ZsPolicy, what: &'static str) -> Result<&'a TabularPolicy, Fail> {
    p.as_ref().map(|p| &p.0).ok_or(Fail::Null(what))
}

fn copy_out(dst: &mut [f64], src: &[f64]) -> Result<(), Fail> {
    if dst.len() != src.len() {
        return Err(Error::Dimension(format!("output buffer has {} slots, need {}", dst.len(), src.len())).into());
    }
    dst.copy_from_slice(src);
    Ok(())
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn opt(x: f64) -> Option<f64> {
    if x.is_nan() {
        None
    } else {
        Some(x)
    }
}

/// Message of the last failed call on this thread (empty after success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn zs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn zs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a game from flat row-major tensors: `reward[(s*A + a)*A + b]` and
/// `transition[((s*A + a)*A + b)*S + s']`.
///
/// # Safety
/// `reward` and `transition` must point to `reward_len` / `transition_len`
/// readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zs_game_new(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    reward: *const f64,
    reward_len: usize,
    transition: *const f64,
    transition_len: usize,
    out: *mut *mut ZsGame,
) -> ZsStatus {
    guard(|| {
        let r = slice(reward, reward_len, "reward")?.to_vec();
        let p = slice(transition, transition_len, "transition")?.to_vec();
        put(out, ZsGame(MarkovGame::new(n_states, n_actions, gamma, r, p)?))
    })
}

/// Loads a JSON game file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zs_game_load(path: *const c_char, out: *mut *mut ZsGame) -> ZsStatus {
    guard(|| {
        if path.is_null() {
            return Err(Fail::Null("path"));
        }
        let path = CStr::from_ptr(path).to_string_lossy().into_owned();
        put(out, ZsGame(GameFile::load(path)?))
    })
}

/// Random game with Dirichlet(1) transitions and uniform rewards.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zs_game_random(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
    out: *mut *mut ZsGame,
) -> ZsStatus {
    guard(|| put(out, ZsGame(random_game(n_states, n_actions, gamma, seed)?)))
}

/// # Safety
/// `game` must come from a `zs_game_*` constructor and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn zs_game_free(game: *mut ZsGame) {
    if !game.is_null() {
        drop(Box::from_raw(game));
    }
}

/// Writes `|S|`, `|A|` and `gamma`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn zs_game_shape(
    game: *const ZsGame,
    n_states: *mut usize,
    n_actions: *mut usize,
    gamma: *mut f64,
) -> ZsStatus {
    guard(|| {
        let g = game_ref(game)?;
        if n_states.is_null() || n_actions.is_null() || gamma.is_null() {
            return Err(Fail::Null("shape output"));
        }
        *n_states = g.n_states();
        *n_actions = g.n_actions();
        *gamma = g.gamma();
        Ok(())
    })
}

/// Uniform policy.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zs_policy_uniform(n_states: usize, n_actions: usize, out: *mut *mut ZsPolicy) -> ZsStatus {
    guard(|| {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidPolicy("policy needs at least one state and action".into()).into());
        }
        put(out, ZsPolicy(TabularPolicy::uniform(n_states, n_actions)))
    })
}

/// Policy from row-major probabilities `probs[s*A + a]`.
///
/// # Safety
/// `probs` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zs_policy_from_probs(
    n_states: usize,
    n_actions: usize,
    probs: *const f64,
    len: usize,
    out: *mut *mut ZsPolicy,
) -> ZsStatus {
    guard(|| {
        let p = slice(probs, len, "probs")?.to_vec();
        put(out, ZsPolicy(TabularPolicy::from_probs(n_states, n_actions, p)?))
    })
}

/// Copies the probabilities (`|S| * |A|` doubles) into `out`.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn zs_policy_probs(policy: *const ZsPolicy, out: *mut f64, len: usize) -> ZsStatus {
    guard(|| {
        let p = policy_ref(policy, "policy")?;
        copy_out(slice_mut(out, len, "out")?, p.probs())
    })
}

/// # Safety
/// `policy` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn zs_policy_free(policy: *mut ZsPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// `V^{pi1,pi2}` into `out` (`|S|` doubles).
///
/// # Safety
/// Handles must be valid; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn zs_evaluate(
    game: *const ZsGame,
    pi1: *const ZsPolicy,
    pi2: *const ZsPolicy,
    out: *mut f64,
    len: usize,
) -> ZsStatus {
    guard(|| {
        let v = evaluate_value(game_ref(game)?, policy_ref(pi1, "pi1")?, policy_ref(pi2, "pi2")?)?;
        copy_out(slice_mut(out, len, "out")?, &v.values)
    })
}

/// Shapley value iteration: `V*` into `v_out`, optional equilibrium policies.
///
/// # Safety
/// `v_out` must point to `len` writable doubles; `pi1_out` / `pi2_out` may be
/// null, otherwise writable.
#[no_mangle]
pub unsafe extern "C" fn zs_solve_nash(
    game: *const ZsGame,
    tol: f64,
    v_out: *mut f64,
    len: usize,
    pi1_out: *mut *mut ZsPolicy,
    pi2_out: *mut *mut ZsPolicy,
) -> ZsStatus {
    guard(|| {
        let cert = shapley_value_iteration(game_ref(game)?, tol)?;
        copy_out(slice_mut(v_out, len, "v_out")?, &cert.v_star.values)?;
        if !pi1_out.is_null() {
            put(pi1_out, ZsPolicy(cert.pi1_star))?;
        }
        if !pi2_out.is_null() {
            put(pi2_out, ZsPolicy(cert.pi2_star))?;
        }
        Ok(())
    })
}

/// Min player's best response to `pi1`: values into `v_out`, policy into `pi2_out` (nullable).
///
/// # Safety
/// As for [`zs_solve_nash`].
#[no_mangle]
pub unsafe extern "C" fn zs_best_response(
    game: *const ZsGame,
    pi1: *const ZsPolicy,
    v_out: *mut f64,
    len: usize,
    pi2_out: *mut *mut ZsPolicy,
) -> ZsStatus {
    guard(|| {
        let br = best_response_min(game_ref(game)?, policy_ref(pi1, "pi1")?)?;
        copy_out(slice_mut(v_out, len, "v_out")?, &br.value.values)?;
        if !pi2_out.is_null() {
            put(pi2_out, ZsPolicy(br.pi2))?;
        }
        Ok(())
    })
}

/// `V*(rho) - inf_{pi2} V^{pi1,pi2}(rho)`.
///
/// # Safety
/// `rho` must point to `rho_len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zs_exploitability(
    game: *const ZsGame,
    pi1: *const ZsPolicy,
    rho: *const f64,
    rho_len: usize,
    out: *mut f64,
) -> ZsStatus {
    guard(|| {
        let rho = StateDist::new(slice(rho, rho_len, "rho")?.to_vec())?;
        let e = exploitability(game_ref(game)?, policy_ref(pi1, "pi1")?, &rho)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = e;
        Ok(())
    })
}

/// Population NPG with uniform `sigma` and `rho`. Pass NaN as `eta` for the
/// default step. Writes `pi1^K` and its exploitability.
///
/// # Safety
/// `pi1_out` and `exploitability_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zs_run_population(
    game: *const ZsGame,
    k: usize,
    t: usize,
    t_prime: usize,
    eta: f64,
    tau: f64,
    pi1_out: *mut *mut ZsPolicy,
    exploitability_out: *mut f64,
) -> ZsStatus {
    guard(|| {
        let g = game_ref(game)?;
        if exploitability_out.is_null() {
            return Err(Fail::Null("exploitability_out"));
        }
        let mut cfg = PopulationConfig::new(g, k, t, t_prime);
        cfg.eta = opt(eta);
        cfg.tau = tau;
        let out = run_population_npg(g, &cfg)?;
        *exploitability_out = out.final_exploitability();
        put(pi1_out, ZsPolicy(out.pi1))
    })
}

/// Online NPG with tabular features, uniform `sigma`/`rho` and default radius
/// and steps. Writes the induced `pi1^K`, its exploitability and the number
/// of oracle calls.
///
/// # Safety
/// Output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn zs_run_online(
    game: *const ZsGame,
    k: usize,
    t: usize,
    t_prime: usize,
    n: usize,
    n_prime: usize,
    seed: u64,
    pi1_out: *mut *mut ZsPolicy,
    exploitability_out: *mut f64,
    samples_out: *mut u64,
) -> ZsStatus {
    guard(|| {
        let g = game_ref(game)?;
        if exploitability_out.is_null() || samples_out.is_null() {
            return Err(Fail::Null("online outputs"));
        }
        let cfg = OnlineConfig::tabular(g, k, t, t_prime, n, n_prime);
        let mut oracle = SamplingOracle::with_sigma(g, &cfg.sigma, seed)?;
        let out = run_online_npg(&mut oracle, &cfg)?;
        *exploitability_out = out.final_exploitability();
        *samples_out = oracle.calls();
        put(pi1_out, ZsPolicy(out.pi1))
    })
}
