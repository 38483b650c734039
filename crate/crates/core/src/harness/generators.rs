//! Seeded game generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::MarkovGame;

/// Generator name plus parameters, as written in experiment specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GameKind {
    /// Dirichlet(1) transition rows and uniform `[0, 1)` rewards.
    Random {
        n_states: usize,
        n_actions: usize,
        gamma: f64,
    },
    /// `n` matching-pennies states; matching actions advance `s -> s+1 mod n`,
    /// mismatches stay put.
    MatchingPenniesChain { n_states: usize, gamma: f64 },
    /// One absorbing state with the given payoff matrix.
    SingleState { matrix: Vec<Vec<f64>>, gamma: f64 },
}

pub fn generate_game(kind: &GameKind, seed: u64) -> Result<MarkovGame> {
    match kind {
        GameKind::Random {
            n_states,
            n_actions,
            gamma,
        } => random_game(*n_states, *n_actions, *gamma, seed),
        GameKind::MatchingPenniesChain { n_states, gamma } => matching_pennies_chain(*n_states, *gamma),
        GameKind::SingleState { matrix, gamma } => single_state(matrix, *gamma),
    }
}

pub fn random_game(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<MarkovGame> {
    if n_states == 0 || n_actions == 0 {
        return Err(Error::InvalidConfig("random game needs positive sizes".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_joint = n_states * n_actions * n_actions;
    let reward: Vec<f64> = (0..n_joint).map(|_| rng.random::<f64>()).collect();
    let mut transition = Vec::with_capacity(n_joint * n_states);
    for _ in 0..n_joint {
        // normalized unit exponentials are a symmetric Dirichlet(1) draw
        let w: Vec<f64> = (0..n_states).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let z: f64 = w.iter().sum();
        transition.extend(w.iter().map(|x| x / z));
    }
    MarkovGame::new(n_states, n_actions, gamma, reward, transition)
}

pub fn matching_pennies_chain(n_states: usize, gamma: f64) -> Result<MarkovGame> {
    if n_states == 0 {
        return Err(Error::InvalidConfig("chain needs at least one state".into()));
    }
    let reward = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; n_states];
    let transition = (0..n_states)
        .map(|s| {
            (0..2)
                .map(|a| {
                    (0..2)
                        .map(|b| {
                            let next = if a == b { (s + 1) % n_states } else { s };
                            let mut row = vec![0.0; n_states];
                            row[next] = 1.0;
                            row
                        })
                        .collect()
                })
                .collect()
        })
        .collect::<Vec<Vec<Vec<Vec<f64>>>>>();
    MarkovGame::from_nested(gamma, &reward, &transition)
}

pub fn single_state(matrix: &[Vec<f64>], gamma: f64) -> Result<MarkovGame> {
    let n = matrix.len();
    if n == 0 || matrix.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidConfig("single_state needs a square matrix".into()));
    }
    MarkovGame::from_nested(gamma, &[matrix.to_vec()], &[vec![vec![vec![1.0]; n]; n]])
}
