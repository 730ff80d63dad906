//! Seeded environment generators.

use std::path::PathBuf;

use navex::{ActionId, ChangeSchedule, CmpError, Kernel, KernelBuilder, StateId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Generated kernels are kept small enough for the exact oracles.
pub const MAX_STATES: usize = 100_000;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("{0}")]
    Params(String),
    #[error(transparent)]
    Kernel(#[from] CmpError),
}

fn default_actions() -> usize {
    2
}

fn default_lock_actions() -> usize {
    3
}

fn default_branching() -> usize {
    2
}

/// Environment family and parameters. Action 0 is always RESET; `noise` is
/// the probability that a move falls back to the start state (chain,
/// combolock, random tree) or stays put (grid).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    /// `n + 1` states in a line; action 1 moves one link forward, every
    /// other action returns to the start.
    Chain {
        n: usize,
        #[serde(default = "default_actions")]
        actions: usize,
        #[serde(default)]
        noise: f64,
    },
    /// Like a chain, but each link has its own seeded correct action and
    /// every wrong action returns to the start.
    Combolock {
        n: usize,
        #[serde(default = "default_lock_actions")]
        actions: usize,
        #[serde(default)]
        noise: f64,
    },
    /// `width × height` cells with the start in a corner; actions 1 to 4
    /// move up, down, left and right.
    Grid {
        width: usize,
        height: usize,
        #[serde(default)]
        noise: f64,
    },
    /// `n` states grown as a seeded random tree: each non-root state hangs
    /// off an earlier one through one of its free actions. Unused actions
    /// return to the start.
    RandomTree {
        n: usize,
        #[serde(default = "default_branching")]
        branching: usize,
        #[serde(default)]
        noise: f64,
    },
    /// First segment of a schedule file.
    File { path: PathBuf },
}

impl EnvSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::Chain { .. } => "chain",
            EnvSpec::Combolock { .. } => "combolock",
            EnvSpec::Grid { .. } => "grid",
            EnvSpec::RandomTree { .. } => "random_tree",
            EnvSpec::File { .. } => "file",
        }
    }
}

fn check_noise(noise: f64) -> Result<(), EnvError> {
    if !(0.0..1.0).contains(&noise) {
        return Err(EnvError::Params(format!("noise must lie in [0, 1), got {noise}")));
    }
    Ok(())
}

fn check_size(states: usize) -> Result<(), EnvError> {
    if states > MAX_STATES {
        return Err(EnvError::Params(format!(
            "{states} states exceed the limit of {MAX_STATES}"
        )));
    }
    Ok(())
}

/// `target` with probability `1 - noise`, `fallback` otherwise.
fn noisy(target: usize, fallback: usize, noise: f64) -> Vec<(StateId, f64)> {
    if noise == 0.0 || target == fallback {
        vec![(StateId(target), 1.0)]
    } else {
        vec![(StateId(target), 1.0 - noise), (StateId(fallback), noise)]
    }
}

pub fn generate_env(spec: &EnvSpec, seed: u64) -> Result<Kernel, EnvError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match *spec {
        EnvSpec::Chain { n, actions, noise } => {
            check_noise(noise)?;
            check_size(n + 1)?;
            let mut b = KernelBuilder::new(n + 1, actions)?;
            for s in 0..=n {
                b.set_row(StateId(s), ActionId(1), &noisy((s + 1).min(n), 0, noise))?;
                for a in 2..actions {
                    b.set_deterministic(StateId(s), ActionId(a), StateId::START)?;
                }
            }
            Ok(b.build()?)
        }
        EnvSpec::Combolock { n, actions, noise } => {
            check_noise(noise)?;
            check_size(n + 1)?;
            let mut b = KernelBuilder::new(n + 1, actions)?;
            for s in 0..=n {
                let correct = rng.random_range(1..actions);
                for a in 1..actions {
                    let row = if a == correct {
                        noisy((s + 1).min(n), 0, noise)
                    } else {
                        vec![(StateId::START, 1.0)]
                    };
                    b.set_row(StateId(s), ActionId(a), &row)?;
                }
            }
            Ok(b.build()?)
        }
        EnvSpec::Grid { width, height, noise } => {
            check_noise(noise)?;
            if width == 0 || height == 0 {
                return Err(EnvError::Params(format!(
                    "grid must be non-empty, got {width}×{height}"
                )));
            }
            check_size(width.saturating_mul(height))?;
            let mut b = KernelBuilder::new(width * height, 5)?;
            for y in 0..height {
                for x in 0..width {
                    let s = y * width + x;
                    let moves = [
                        (x, (y + 1).min(height - 1)),
                        (x, y.saturating_sub(1)),
                        (x.saturating_sub(1), y),
                        ((x + 1).min(width - 1), y),
                    ];
                    for (i, (nx, ny)) in moves.into_iter().enumerate() {
                        b.set_row(StateId(s), ActionId(i + 1), &noisy(ny * width + nx, s, noise))?;
                    }
                }
            }
            Ok(b.build()?)
        }
        EnvSpec::RandomTree { n, branching, noise } => {
            check_noise(noise)?;
            if n == 0 || branching == 0 {
                return Err(EnvError::Params(
                    "a tree needs at least one state and branching ≥ 1".into(),
                ));
            }
            check_size(n)?;
            let actions = branching + 1;
            let mut child: Vec<Vec<Option<usize>>> = vec![vec![None; actions]; n];
            let mut open: Vec<(usize, usize)> = (1..actions).map(|a| (0, a)).collect();
            for s in 1..n {
                let i = rng.random_range(0..open.len());
                let (parent, a) = open.swap_remove(i);
                child[parent][a] = Some(s);
                open.extend((1..actions).map(|a| (s, a)));
            }
            let mut b = KernelBuilder::new(n, actions)?;
            for (s, slots) in child.iter().enumerate() {
                for (a, slot) in slots.iter().enumerate().skip(1) {
                    let row = match *slot {
                        Some(c) => noisy(c, 0, noise),
                        None => vec![(StateId::START, 1.0)],
                    };
                    b.set_row(StateId(s), ActionId(a), &row)?;
                }
            }
            Ok(b.build()?)
        }
        EnvSpec::File { ref path } => {
            let schedule = ChangeSchedule::load(path)?;
            Ok(schedule.segments()[0].kernel.as_ref().clone())
        }
    }
}

/// Write `kernel` as a one-segment schedule file.
pub fn save_kernel(kernel: &Kernel, path: impl AsRef<std::path::Path>) -> Result<(), CmpError> {
    ChangeSchedule::stationary(kernel.clone()).save(path)
}
