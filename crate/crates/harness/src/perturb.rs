//! Kernel perturbations whose qualitative effect is checked with the exact
//! oracles before they are accepted.

use std::collections::BTreeSet;

use navex::oracle::{nav_time, optimal_policy, s_arrow_l, NavTime};
use navex::{ActionId, CmpError, Kernel, KernelBuilder, StateId};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("perturbation leaves the kernel unchanged")]
    Unchanged,
    #[error("{kind} did not have the intended effect: {detail}")]
    Ineffective { kind: &'static str, detail: String },
    #[error("no {kind} candidate changes the reachable set of this kernel")]
    NoCandidate { kind: &'static str },
    #[error(transparent)]
    Kernel(#[from] CmpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Perturbation {
    /// Send `(state, action)` to the start state so that some state leaves
    /// `S→_L`. Without an explicit row, a seeded choice among the rows that
    /// have this effect.
    BreakEdge {
        #[serde(default)]
        state: Option<usize>,
        #[serde(default)]
        action: Option<usize>,
    },
    /// Point `(from, action)` at `to` so that `S→_L` strictly grows. Without
    /// explicit fields, a seeded choice among the rows that have this effect.
    AddShortcut {
        #[serde(default)]
        from: Option<usize>,
        #[serde(default)]
        action: Option<usize>,
        #[serde(default)]
        to: Option<usize>,
    },
    /// Divert mass `slip` to the start state along the optimal policy for
    /// `target`, until that policy needs more than `(1+ε)L` steps.
    DegradePolicy { target: usize, slip: f64 },
    /// Always rejected: a change must change something.
    Noop,
}

impl Perturbation {
    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::BreakEdge { .. } => "break_edge",
            Perturbation::AddShortcut { .. } => "add_shortcut",
            Perturbation::DegradePolicy { .. } => "degrade_policy",
            Perturbation::Noop => "noop",
        }
    }
}

pub type RowOverride = (StateId, ActionId, Vec<(StateId, f64)>);

/// Copy of `kernel` with the rows in `overrides` replaced.
pub fn with_rows(kernel: &Kernel, overrides: &[RowOverride]) -> Result<Kernel, CmpError> {
    let mut b = KernelBuilder::new(kernel.state_count(), kernel.action_count())?;
    for s in kernel.states() {
        for a in kernel.actions().filter(|a| !a.is_reset()) {
            b.set_row(s, a, kernel.row(s, a))?;
        }
    }
    for (s, a, row) in overrides {
        b.set_row(*s, *a, row)?;
    }
    b.build()
}

fn redirect(kernel: &Kernel, s: StateId, a: ActionId, to: StateId) -> Result<Kernel, CmpError> {
    kernel.check_state(s)?;
    kernel.check_action(a)?;
    kernel.check_state(to)?;
    if a.is_reset() {
        return Err(CmpError::Format("the RESET row cannot be perturbed".into()));
    }
    with_rows(kernel, &[(s, a, vec![(to, 1.0)])])
}

fn rows(kernel: &Kernel, state: Option<usize>, action: Option<usize>) -> Vec<(StateId, ActionId)> {
    let states: Vec<StateId> = match state {
        Some(s) => vec![StateId(s)],
        None => kernel.states().collect(),
    };
    let actions: Vec<ActionId> = match action {
        Some(a) => vec![ActionId(a)],
        None => kernel.actions().filter(|a| !a.is_reset()).collect(),
    };
    states
        .iter()
        .flat_map(|&s| actions.iter().map(move |&a| (s, a)))
        .collect()
}

/// Apply `p` to `kernel` and verify its effect at radius `l`.
pub fn perturb(kernel: &Kernel, p: &Perturbation, l: f64, eps: f64, seed: u64) -> Result<Kernel, PerturbError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let before = s_arrow_l(kernel, l);
    let out = match *p {
        Perturbation::Noop => return Err(PerturbError::Unchanged),
        Perturbation::BreakEdge { state, action } => {
            let explicit = state.is_some() && action.is_some();
            let mut candidates = rows(kernel, state, action);
            candidates.shuffle(&mut rng);
            let mut found = None;
            for (s, a) in candidates {
                let k = redirect(kernel, s, a, StateId::START)?;
                if explicit || !before.is_subset(&s_arrow_l(&k, l)) {
                    found = Some(k);
                    break;
                }
            }
            let k = found.ok_or(PerturbError::NoCandidate { kind: p.name() })?;
            let after = s_arrow_l(&k, l);
            if before.is_subset(&after) {
                return Err(PerturbError::Ineffective {
                    kind: p.name(),
                    detail: format!(
                        "S→_L went from {} to {} states and lost none",
                        before.len(),
                        after.len()
                    ),
                });
            }
            k
        }
        Perturbation::AddShortcut { from, action, to } => {
            let targets: Vec<StateId> = match to {
                Some(t) => vec![StateId(t)],
                None => kernel.states().filter(|s| !before.contains(s)).collect(),
            };
            let explicit = from.is_some() && action.is_some() && to.is_some();
            let mut candidates: Vec<(StateId, ActionId, StateId)> = rows(kernel, from, action)
                .into_iter()
                .flat_map(|(s, a)| targets.iter().map(move |&t| (s, a, t)))
                .collect();
            candidates.shuffle(&mut rng);
            let mut found = None;
            for (s, a, t) in candidates {
                let k = redirect(kernel, s, a, t)?;
                if explicit || grows(&before, &s_arrow_l(&k, l)) {
                    found = Some(k);
                    break;
                }
            }
            let k = found.ok_or(PerturbError::NoCandidate { kind: p.name() })?;
            let after = s_arrow_l(&k, l);
            if !grows(&before, &after) {
                return Err(PerturbError::Ineffective {
                    kind: p.name(),
                    detail: format!("S→_L went from {:?} to {:?}", ids(&before), ids(&after)),
                });
            }
            k
        }
        Perturbation::DegradePolicy { target, slip } => {
            if !(slip > 0.0 && slip <= 1.0) {
                return Err(PerturbError::Ineffective {
                    kind: p.name(),
                    detail: format!("slip must lie in (0, 1], got {slip}"),
                });
            }
            let target = StateId(target);
            kernel.check_state(target)?;
            let all: BTreeSet<StateId> = kernel.states().collect();
            let (tau, policy) = optimal_policy(kernel, &all, target);
            let bound = (1.0 + eps) * l;
            if !tau.within(bound) {
                return Err(PerturbError::Ineffective {
                    kind: p.name(),
                    detail: format!("the best policy for {target} already needs {tau} > {bound} steps"),
                });
            }
            let overrides: Vec<_> = policy
                .as_map()
                .iter()
                .map(|(&s, &a)| {
                    let mut row: Vec<(StateId, f64)> =
                        kernel.row(s, a).iter().map(|&(j, q)| (j, q * (1.0 - slip))).collect();
                    row.push((StateId::START, slip));
                    (s, a, row)
                })
                .collect();
            let k = with_rows(kernel, &overrides)?;
            let after = nav_time(&k, &policy, target);
            if after.within(bound) {
                return Err(PerturbError::Ineffective {
                    kind: p.name(),
                    detail: format!("the policy for {target} still takes {after} ≤ {bound} steps"),
                });
            }
            k
        }
    };
    if &out == kernel {
        return Err(PerturbError::Unchanged);
    }
    Ok(out)
}

fn grows(before: &BTreeSet<StateId>, after: &BTreeSet<StateId>) -> bool {
    before.is_subset(after) && after.len() > before.len()
}

fn ids(set: &BTreeSet<StateId>) -> Vec<usize> {
    set.iter().map(|s| s.0).collect()
}

/// Navigation time of the best policy for `target`, for diagnostics.
pub fn best_time(kernel: &Kernel, target: StateId) -> NavTime {
    let all: BTreeSet<StateId> = kernel.states().collect();
    optimal_policy(kernel, &all, target).0
}
