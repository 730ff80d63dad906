//! Ground truth on a known kernel: navigation times, restricted optimal
//! navigation times, `S_L` and the incrementally discoverable set `S→_L`.
//!
//! Nothing here is visible to the learner. Metrics, tests and environment
//! validation are the only callers.
//!
//! Infinite navigation times are decided exactly on the transition graph
//! (almost-sure reachability) before any numerics run, so `NavTime::Infinite`
//! never depends on a convergence threshold.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cmp::{ActionId, Kernel, StateId};
use crate::explorer::Hypothesis;

/// Slack used when comparing a navigation time against a radius.
pub const NAV_TOLERANCE: f64 = 1e-9;

/// Largest system solved exactly; bigger instances use value iteration.
const EXACT_SOLVE_LIMIT: usize = 200;
const VI_THRESHOLD: f64 = 1e-10;
const VI_MAX_SWEEPS: usize = 10_000_000;

/// Expected number of steps to reach a target, or infinity when the target
/// is reached with probability below one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NavTime {
    Finite(f64),
    Infinite,
}

impl NavTime {
    pub fn value(self) -> f64 {
        match self {
            NavTime::Finite(v) => v,
            NavTime::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, NavTime::Finite(_))
    }

    /// `self ≤ bound` up to [`NAV_TOLERANCE`].
    pub fn within(self, bound: f64) -> bool {
        match self {
            NavTime::Finite(v) => v <= bound + NAV_TOLERANCE,
            NavTime::Infinite => false,
        }
    }
}

impl PartialOrd for NavTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

impl fmt::Display for NavTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NavTime::Finite(v) => write!(f, "{v:.6}"),
            NavTime::Infinite => write!(f, "inf"),
        }
    }
}

/// A stationary deterministic policy on a state subset: every state outside
/// the domain plays RESET.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Policy {
    #[serde(with = "pair_list")]
    actions: BTreeMap<StateId, ActionId>,
}

/// Maps keyed by state serialize as `[key, value]` pairs, since JSON object
/// keys would turn the ids into strings.
pub(crate) mod pair_list {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, K: Serialize, V: Serialize>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, D, K, V>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        D: Deserializer<'de>,
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
    {
        Ok(Vec::<(K, V)>::deserialize(d)?.into_iter().collect())
    }
}

impl Policy {
    /// Plays RESET everywhere.
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_map(actions: BTreeMap<StateId, ActionId>) -> Self {
        Self { actions }
    }

    pub fn action(&self, s: StateId) -> ActionId {
        self.actions.get(&s).copied().unwrap_or(ActionId::RESET)
    }

    pub fn domain(&self) -> impl Iterator<Item = StateId> + '_ {
        self.actions.keys().copied()
    }

    pub fn contains(&self, s: StateId) -> bool {
        self.actions.contains_key(&s)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<StateId, ActionId> {
        &self.actions
    }
}

// ---------------------------------------------------------------------------
// Stochastic shortest path core
// ---------------------------------------------------------------------------

/// Unit-cost shortest path to an absorbing target with a per-state action set.
struct Ssp<'a> {
    kernel: &'a Kernel,
    target: StateId,
    /// Available actions per state; empty for the target.
    actions: Vec<Vec<ActionId>>,
}

struct SspSolution {
    /// Optimal expected cost per state, `None` where it is infinite.
    values: Vec<Option<f64>>,
    /// Minimizing action per state with finite value (target excluded).
    choice: Vec<Option<ActionId>>,
}

impl<'a> Ssp<'a> {
    fn new(kernel: &'a Kernel, target: StateId, mut available: impl FnMut(StateId) -> Vec<ActionId>) -> Self {
        let actions = kernel
            .states()
            .map(|s| if s == target { Vec::new() } else { available(s) })
            .collect();
        Self {
            kernel,
            target,
            actions,
        }
    }

    fn safe(&self, x: usize, a: ActionId, inside: &[bool]) -> bool {
        self.kernel.row(StateId(x), a).iter().all(|(j, _)| inside[j.0])
    }

    /// States from which the target is reached almost surely under some
    /// policy, with a proper policy on them (actions that keep the process
    /// inside the set and descend a BFS layer with positive probability).
    fn almost_sure(&self) -> (Vec<bool>, Vec<Option<ActionId>>) {
        let n = self.kernel.state_count();
        let mut inside = vec![true; n];
        loop {
            let mut layer: Vec<Option<usize>> = vec![None; n];
            let mut proper: Vec<Option<ActionId>> = vec![None; n];
            layer[self.target.0] = Some(0);
            let mut k = 0;
            loop {
                k += 1;
                let mut added = Vec::new();
                for x in 0..n {
                    if !inside[x] || layer[x].is_some() {
                        continue;
                    }
                    let found = self.actions[x].iter().copied().find(|&a| {
                        self.safe(x, a, &inside)
                            && self
                                .kernel
                                .row(StateId(x), a)
                                .iter()
                                .any(|(j, _)| layer[j.0].is_some_and(|l| l < k))
                    });
                    if let Some(a) = found {
                        added.push((x, a));
                    }
                }
                if added.is_empty() {
                    break;
                }
                for (x, a) in added {
                    layer[x] = Some(k);
                    proper[x] = Some(a);
                }
            }
            let next: Vec<bool> = layer.iter().map(Option::is_some).collect();
            if next == inside {
                return (inside, proper);
            }
            inside = next;
        }
    }

    fn solve(&self) -> SspSolution {
        let n = self.kernel.state_count();
        let (inside, proper) = self.almost_sure();
        let safe_actions: Vec<Vec<ActionId>> = (0..n)
            .map(|x| {
                if !inside[x] {
                    return Vec::new();
                }
                self.actions[x]
                    .iter()
                    .copied()
                    .filter(|&a| self.safe(x, a, &inside))
                    .collect()
            })
            .collect();
        // unknowns: inside states other than the target
        let unknowns: Vec<usize> = (0..n).filter(|&x| inside[x] && x != self.target.0).collect();
        let (values, choice) = if unknowns.len() <= EXACT_SOLVE_LIMIT {
            self.policy_iteration(&unknowns, &safe_actions, proper)
        } else {
            self.value_iteration(&unknowns, &safe_actions)
        };
        let values = (0..n).map(|x| if inside[x] { Some(values[x]) } else { None }).collect();
        SspSolution { values, choice }
    }

    fn q_value(&self, x: usize, a: ActionId, v: &[f64]) -> f64 {
        1.0 + self
            .kernel
            .row(StateId(x), a)
            .iter()
            .map(|(j, p)| p * v[j.0])
            .sum::<f64>()
    }

    fn evaluate(&self, unknowns: &[usize], policy: &[Option<ActionId>]) -> Vec<f64> {
        let n = self.kernel.state_count();
        let mut index = vec![usize::MAX; n];
        for (i, &x) in unknowns.iter().enumerate() {
            index[x] = i;
        }
        let m = unknowns.len();
        if m == 0 {
            return vec![0.0; n];
        }
        let mut mat = DMatrix::<f64>::identity(m, m);
        let rhs = DVector::<f64>::from_element(m, 1.0);
        for (i, &x) in unknowns.iter().enumerate() {
            let a = policy[x].expect("proper policy covers every unknown");
            for &(j, p) in self.kernel.row(StateId(x), a) {
                if j != self.target {
                    mat[(i, index[j.0])] -= p;
                }
            }
        }
        let sol = mat.lu().solve(&rhs).expect("proper policy gives a regular system");
        let mut v = vec![0.0; n];
        for (i, &x) in unknowns.iter().enumerate() {
            v[x] = sol[i];
        }
        v
    }

    fn policy_iteration(
        &self,
        unknowns: &[usize],
        safe_actions: &[Vec<ActionId>],
        mut policy: Vec<Option<ActionId>>,
    ) -> (Vec<f64>, Vec<Option<ActionId>>) {
        loop {
            let v = self.evaluate(unknowns, &policy);
            let mut changed = false;
            for &x in unknowns {
                let current = v[x];
                let (best_a, best_q) = safe_actions[x].iter().map(|&a| (a, self.q_value(x, a, &v))).fold(
                    (None, f64::INFINITY),
                    |acc, (a, q)| {
                        if q < acc.1 {
                            (Some(a), q)
                        } else {
                            acc
                        }
                    },
                );
                if best_q < current - 1e-12 * (1.0 + current) {
                    policy[x] = best_a;
                    changed = true;
                }
            }
            if !changed {
                return (v, policy);
            }
        }
    }

    fn value_iteration(&self, unknowns: &[usize], safe_actions: &[Vec<ActionId>]) -> (Vec<f64>, Vec<Option<ActionId>>) {
        let n = self.kernel.state_count();
        let mut v = vec![0.0; n];
        let mut choice = vec![None; n];
        for _ in 0..VI_MAX_SWEEPS {
            let mut delta: f64 = 0.0;
            for &x in unknowns {
                let (a, q) = safe_actions[x].iter().map(|&a| (a, self.q_value(x, a, &v))).fold(
                    (None, f64::INFINITY),
                    |acc, (a, q)| if q < acc.1 { (Some(a), q) } else { acc },
                );
                delta = delta.max((q - v[x]).abs());
                v[x] = q;
                choice[x] = a;
            }
            if delta < VI_THRESHOLD {
                break;
            }
        }
        (v, choice)
    }
}

// ---------------------------------------------------------------------------
// Public oracles
// ---------------------------------------------------------------------------

/// Expected hitting time of `target` from the start state under `policy`.
pub fn nav_time(kernel: &Kernel, policy: &Policy, target: StateId) -> NavTime {
    if target == StateId::START {
        return NavTime::Finite(0.0);
    }
    let ssp = Ssp::new(kernel, target, |s| vec![policy.action(s)]);
    finite_or_inf(ssp.solve().values[StateId::START.0])
}

/// Minimum navigation time to `target` over policies on `allowed`.
pub fn min_nav_time(kernel: &Kernel, allowed: &BTreeSet<StateId>, target: StateId) -> NavTime {
    optimal_policy(kernel, allowed, target).0
}

/// Minimum navigation time together with a minimizing policy on `allowed`.
pub fn optimal_policy(kernel: &Kernel, allowed: &BTreeSet<StateId>, target: StateId) -> (NavTime, Policy) {
    if target == StateId::START {
        return (NavTime::Finite(0.0), Policy::empty());
    }
    let all: Vec<ActionId> = kernel.actions().collect();
    let ssp = Ssp::new(kernel, target, |s| {
        if allowed.contains(&s) {
            all.clone()
        } else {
            vec![ActionId::RESET]
        }
    });
    let sol = ssp.solve();
    let map = allowed
        .iter()
        .filter(|&&s| s != target)
        .map(|&s| (s, sol.choice[s.0].unwrap_or(ActionId::RESET)))
        .collect();
    (finite_or_inf(sol.values[StateId::START.0]), Policy::from_map(map))
}

fn finite_or_inf(v: Option<f64>) -> NavTime {
    v.map_or(NavTime::Infinite, NavTime::Finite)
}

/// Minimum navigation times from the start state to every state.
pub fn min_nav_times(kernel: &Kernel) -> Vec<NavTime> {
    let all: BTreeSet<StateId> = kernel.states().collect();
    kernel.states().map(|s| min_nav_time(kernel, &all, s)).collect()
}

/// `S_L`: states whose unrestricted minimum navigation time is at most `l`.
pub fn s_l(kernel: &Kernel, l: f64) -> BTreeSet<StateId> {
    min_nav_times(kernel)
        .into_iter()
        .enumerate()
        .filter(|(_, t)| t.within(l))
        .map(|(s, _)| StateId(s))
        .collect()
}

/// `S→_L` by greedy closure from the start state, scanning candidates in
/// ascending id.
pub fn s_arrow_l(kernel: &Kernel, l: f64) -> BTreeSet<StateId> {
    let order: Vec<StateId> = kernel.states().collect();
    s_arrow_l_in_order(kernel, l, &order)
}

/// Greedy closure scanning candidates in the given order. The fixpoint does
/// not depend on the order.
pub fn s_arrow_l_in_order(kernel: &Kernel, l: f64, order: &[StateId]) -> BTreeSet<StateId> {
    let mut known: BTreeSet<StateId> = BTreeSet::from([StateId::START]);
    loop {
        let added: Vec<StateId> = order
            .iter()
            .copied()
            .filter(|s| !known.contains(s))
            .filter(|&s| min_nav_time(kernel, &known, s).within(l))
            .collect();
        if added.is_empty() {
            return known;
        }
        known.extend(added);
    }
}

/// Whether `hyp` covers `S→_L` and every one of its policies navigates
/// within `(1+eps)·l` on `kernel`.
pub fn hypothesis_valid(kernel: &Kernel, hyp: &Hypothesis, l: f64, eps: f64) -> bool {
    let required = s_arrow_l(kernel, l);
    hypothesis_valid_given(kernel, hyp, &required, l, eps)
}

/// [`hypothesis_valid`] with a precomputed `S→_L`.
pub fn hypothesis_valid_given(
    kernel: &Kernel,
    hyp: &Hypothesis,
    required: &BTreeSet<StateId>,
    l: f64,
    eps: f64,
) -> bool {
    let covered = required.iter().all(|s| hyp.contains(*s));
    covered
        && hyp
            .iter()
            .all(|(s, pi)| nav_time(kernel, pi, s).within((1.0 + eps) * l))
}
