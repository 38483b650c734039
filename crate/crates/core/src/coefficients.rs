//! Concentrability coefficients `c_{rho,sigma}(j)`, their weighted sums, and the
//! distribution-mismatch coefficient, computed exactly on small games.
//!
//! `(rho P_1 ... P_j)(s') = rho . (P_1 (P_2 (... P_j e_{s'})))` and every
//! `P_pi` is non-negative, so the supremum over policy sequences is reached by
//! maximizing the inner vector state by state, innermost factor first. Row `s`
//! of `P_pi u` is multilinear in `(pi1(.|s), pi2(.|s))`, so each maximum sits
//! at a vertex: a deterministic action pair. The backward recursion therefore
//! equals the enumeration over deterministic sequences, which is kept as a
//! gated cross-check.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{visitation, MarkovGame, StateDist, TabularPolicy};
use crate::oracle::best_response_min;

/// Largest number of deterministic policy-pair sequences the enumeration visits.
pub const COEFF_ENUMERATION_LIMIT: f64 = 1e6;

/// Report tolerance behind the default truncation depth.
pub const DEFAULT_REPORT_EPS: f64 = 1e-6;

/// `J = ceil(log(eps (1 - gamma)) / log gamma)`.
pub fn default_depth(gamma: f64, eps: f64) -> usize {
    if gamma == 0.0 {
        return 0;
    }
    ((eps * (1.0 - gamma)).ln() / gamma.ln()).ceil().max(0.0) as usize
}

/// One `C^{l,k,d}` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LkdEntry {
    pub l: usize,
    pub k: usize,
    pub d: usize,
    /// Sum truncated at inner index `j <= J`.
    #[serde(with = "json_f64")]
    pub value: f64,
    /// Bound on the omitted remainder.
    #[serde(with = "json_f64")]
    pub tail_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrabilityReport {
    #[serde(rename = "J")]
    pub depth: usize,
    /// `c(j)`, keyed by `j` (`+inf` when `sigma` misses a reachable state).
    #[serde(serialize_with = "ser_c", deserialize_with = "de_c")]
    pub c_values: Vec<f64>,
    /// `C'` truncated at `m - 1 <= J`.
    #[serde(with = "json_f64")]
    pub c_prime: f64,
    /// Remainder bound for `C'`.
    #[serde(with = "json_f64")]
    pub tail_bound: f64,
    pub c_lkd: Vec<LkdEntry>,
}

impl ConcentrabilityReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Interval `[C'_J, C'_J + tail]` that contains the untruncated `C'`.
    pub fn c_prime_bracket(&self) -> (f64, f64) {
        (self.c_prime, self.c_prime + self.tail_bound)
    }
}

fn ser_c<S: serde::Serializer>(c: &[f64], ser: S) -> std::result::Result<S::Ok, S::Error> {
    let map: BTreeMap<String, JsonF64> = c
        .iter()
        .enumerate()
        .map(|(j, v)| (j.to_string(), JsonF64(*v)))
        .collect();
    map.serialize(ser)
}

fn de_c<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Vec<f64>, D::Error> {
    let map = BTreeMap::<String, JsonF64>::deserialize(de)?;
    let mut out: Vec<(usize, f64)> = map
        .into_iter()
        .map(|(k, v)| k.parse().map(|j| (j, v.0)).map_err(serde::de::Error::custom))
        .collect::<std::result::Result<_, _>>()?;
    out.sort_by_key(|(j, _)| *j);
    Ok(out.into_iter().map(|(_, v)| v).collect())
}

/// JSON has no infinity; `+inf` is written as the string `"inf"`.
#[derive(Debug, Clone, Copy)]
struct JsonF64(f64);

impl Serialize for JsonF64 {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_infinite() {
            ser.serialize_str("inf")
        } else {
            ser.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for JsonF64 {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(x) => Ok(Self(x)),
            Raw::Text(t) if t == "inf" => Ok(Self(f64::INFINITY)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("bad number {t}"))),
        }
    }
}

mod json_f64 {
    use super::JsonF64;
    use serde::{Deserialize, Serialize};

    pub fn serialize<S: serde::Serializer>(x: &f64, ser: S) -> Result<S::Ok, S::Error> {
        JsonF64(*x).serialize(ser)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(de: D) -> Result<f64, D::Error> {
        JsonF64::deserialize(de).map(|x| x.0)
    }
}

/// `max_s mass(s) / sigma(s)` with `0/0 = 0` and `x/0 = +inf`.
fn max_ratio(mass: &[f64], sigma: &[f64]) -> f64 {
    mass.iter().zip(sigma).fold(0.0, |m, (x, w)| {
        let r = if *w > 0.0 {
            x / w
        } else if *x > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        m.max(r)
    })
}

fn check_inputs(game: &MarkovGame, rho: &StateDist, sigma: &StateDist) -> Result<()> {
    game.check_dist(rho, "rho")?;
    game.check_dist(sigma, "sigma")
}

/// `c(0..=depth)` by the backward elementwise maximum.
pub fn concentrability_values(
    game: &MarkovGame,
    rho: &StateDist,
    sigma: &StateDist,
    depth: usize,
) -> Result<Vec<f64>> {
    check_inputs(game, rho, sigma)?;
    let (ns, na) = (game.n_states(), game.n_actions());
    let mut best = vec![0.0; depth + 1];
    for target in 0..ns {
        // u(s) = max over sequences of Pr(reach target in i steps | s)
        let mut u = vec![0.0; ns];
        u[target] = 1.0;
        for c in best.iter_mut() {
            let reach = rho.expect(&u);
            let r = max_ratio(&[reach], &[sigma.as_slice()[target]]);
            *c = f64::max(*c, r);
            let mut next = vec![0.0; ns];
            for (s, out) in next.iter_mut().enumerate() {
                for a in 0..na {
                    for b in 0..na {
                        *out = f64::max(*out, game.expected_next(s, a, b, &u));
                    }
                }
            }
            u = next;
        }
    }
    Ok(best)
}

/// `c(j)` by enumerating every deterministic policy-pair sequence of length `j`.
pub fn concentrability_by_enumeration(
    game: &MarkovGame,
    rho: &StateDist,
    sigma: &StateDist,
    j: usize,
) -> Result<f64> {
    check_inputs(game, rho, sigma)?;
    let (ns, na) = (game.n_states(), game.n_actions());
    let per_step = (na as f64).powi(2 * ns as i32);
    let required = per_step.powi(j as i32);
    if required > COEFF_ENUMERATION_LIMIT {
        return Err(Error::EnumerationBudget {
            required,
            budget: COEFF_ENUMERATION_LIMIT,
        });
    }
    fn rec(game: &MarkovGame, dist: &[f64], left: usize, sigma: &[f64], best: &mut f64) {
        if left == 0 {
            *best = best.max(max_ratio(dist, sigma));
            return;
        }
        let (ns, na) = (game.n_states(), game.n_actions());
        let pairs = na * na;
        let mut choice = vec![0usize; ns];
        loop {
            let mut next = vec![0.0; ns];
            for (s, c) in choice.iter().enumerate() {
                let (a, b) = (c / na, c % na);
                for (n, p) in next.iter_mut().zip(game.next_dist(s, a, b)) {
                    *n += dist[s] * p;
                }
            }
            rec(game, &next, left - 1, sigma, best);
            let mut i = 0;
            while i < ns {
                choice[i] += 1;
                if choice[i] < pairs {
                    break;
                }
                choice[i] = 0;
                i += 1;
            }
            if i == ns {
                return;
            }
        }
    }
    let mut best = 0.0;
    rec(game, rho.as_slice(), j, sigma.as_slice(), &mut best);
    Ok(best)
}

/// Largest ratio over `samples` random stochastic policy sequences (rows drawn
/// from a flat Dirichlet); a lower bound on `c(j)`.
pub fn sampled_lower_bound(
    game: &MarkovGame,
    rho: &StateDist,
    sigma: &StateDist,
    j: usize,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_inputs(game, rho, sigma)?;
    let (ns, na) = (game.n_states(), game.n_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw_policy = |rng: &mut ChaCha8Rng| -> TabularPolicy {
        let w: Vec<f64> = (0..ns * na).map(|_| Exp1.sample(rng)).collect();
        TabularPolicy::from_weights(ns, na, w).expect("positive weights")
    };
    let mut best: f64 = 0.0;
    for _ in 0..samples {
        let mut dist = rho.as_slice().to_vec();
        for _ in 0..j {
            let (p1, p2) = (draw_policy(&mut rng), draw_policy(&mut rng));
            let mut next = vec![0.0; ns];
            for (s, ds) in dist.iter().enumerate() {
                for a in 0..na {
                    for b in 0..na {
                        let w = ds * p1.prob(s, a) * p2.prob(s, b);
                        for (n, p) in next.iter_mut().zip(game.next_dist(s, a, b)) {
                            *n += w * p;
                        }
                    }
                }
            }
            dist = next;
        }
        best = best.max(max_ratio(&dist, sigma.as_slice()));
    }
    Ok(best)
}

/// Exact coefficients with `C'` and the requested `C^{l,k,d}` truncated at `depth`;
/// remainders use `c(j) <= max_s 1/sigma(s)`.
pub fn concentrability(
    game: &MarkovGame,
    rho: &StateDist,
    sigma: &StateDist,
    depth: usize,
    lkd: &[(usize, usize, usize)],
) -> Result<ConcentrabilityReport> {
    let gamma = game.gamma();
    for &(l, k, _) in lkd {
        if l >= k {
            return Err(Error::InvalidConfig(format!("C^{{l,k,d}} needs l < k, got l={l}, k={k}")));
        }
        if gamma == 0.0 && l > 0 {
            return Err(Error::InvalidConfig("C^{l,k,d} with l > 0 is undefined at gamma = 0".into()));
        }
    }
    let extra = lkd.iter().map(|e| e.2).max().unwrap_or(0);
    let c = concentrability_values(game, rho, sigma, depth + extra)?;
    let cmax = max_ratio(&vec![1.0; sigma.len()], sigma.as_slice());
    let gp = |n: usize| gamma.powi(n as i32);
    let w = (1.0 - gamma).powi(2);

    let c_prime = w * (1..=depth + 1)
        .map(|m| m as f64 * gp(m - 1) * c[m - 1])
        .sum::<f64>();
    // sum_{m >= M} m gamma^{m-1} = gamma^{M-1} (M - (M-1) gamma) / (1-gamma)^2
    let big_m = depth + 2;
    let tail_sum = gp(big_m - 1) * (big_m as f64 - (big_m - 1) as f64 * gamma) / w;
    let tail_bound = scaled_tail(w * tail_sum, cmax);

    let c_lkd = lkd
        .iter()
        .map(|&(l, k, d)| {
            let pre = w / (gp(l) - gp(k));
            let mut value = 0.0;
            let mut tail = 0.0;
            for i in l..k {
                for j in i..=depth {
                    value += gp(j) * c[j + d];
                }
                tail += gp(i.max(depth + 1)) / (1.0 - gamma);
            }
            LkdEntry {
                l,
                k,
                d,
                value: pre * value,
                tail_bound: scaled_tail(pre * tail, cmax),
            }
        })
        .collect();
    Ok(ConcentrabilityReport {
        depth,
        c_values: c[..=depth].to_vec(),
        c_prime,
        tail_bound,
        c_lkd,
    })
}

/// `coeff * cmax` with `0 * inf = 0` (an exactly vanishing remainder).
fn scaled_tail(coeff: f64, cmax: f64) -> f64 {
    if coeff == 0.0 {
        0.0
    } else {
        coeff * cmax
    }
}

/// `|d_sigma^{pi1, pi2*} / sigma|_inf` with `pi2*` the min player's best
/// response to `pi1`; `+inf` when `sigma` misses a visited state.
pub fn mismatch_coefficient(game: &MarkovGame, pi1: &TabularPolicy, sigma: &StateDist) -> Result<f64> {
    game.check_dist(sigma, "sigma")?;
    let br = best_response_min(game, pi1)?;
    let d = visitation(game, pi1, &br.pi2, sigma)?;
    Ok(max_ratio(d.as_slice(), sigma.as_slice()))
}
