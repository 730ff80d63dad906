//! Reference oracles computed by exhaustive enumeration, plus random small
//! instances to compare them against. Only meant for tests: everything here
//! is exponential in the state count.

use std::collections::{BTreeSet, HashMap};

use navex::{ActionId, Kernel, KernelBuilder, StateId};
use rand::Rng;

/// Expected hitting time of `target` from `start` in the chain where state
/// `x` plays `actions[x]`; `None` if the target is missed with positive
/// probability.
pub fn chain_hitting_time(kernel: &Kernel, actions: &[ActionId], start: StateId, target: StateId) -> Option<f64> {
    if start == target {
        return Some(0.0);
    }
    let n = kernel.state_count();
    let succ = |x: usize| {
        kernel
            .row(StateId(x), actions[x])
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(j, _)| j.0)
            .collect::<Vec<_>>()
    };
    // states reachable from start without passing through the target
    let mut reach = vec![false; n];
    let mut stack = vec![start.0];
    reach[start.0] = true;
    while let Some(x) = stack.pop() {
        if x == target.0 {
            continue;
        }
        for j in succ(x) {
            if !reach[j] {
                reach[j] = true;
                stack.push(j);
            }
        }
    }
    if !reach[target.0] {
        return None;
    }
    // every reachable state must still be able to reach the target
    let mut can = vec![false; n];
    can[target.0] = true;
    let mut changed = true;
    while changed {
        changed = false;
        for x in 0..n {
            if !can[x] && succ(x).iter().any(|&j| can[j]) {
                can[x] = true;
                changed = true;
            }
        }
    }
    if (0..n).any(|x| reach[x] && !can[x]) {
        return None;
    }
    let vars: Vec<usize> = (0..n).filter(|&x| reach[x] && x != target.0).collect();
    let m = vars.len();
    let pos = |x: usize| vars.iter().position(|&v| v == x);
    // (I - P) h = 1 on the reachable transient states
    let mut a = vec![vec![0.0; m + 1]; m];
    for (i, &x) in vars.iter().enumerate() {
        a[i][i] += 1.0;
        a[i][m] = 1.0;
        for &(j, p) in kernel.row(StateId(x), actions[x]) {
            if let Some(k) = pos(j.0) {
                a[i][k] -= p;
            }
        }
    }
    let h = gauss(a);
    Some(h[pos(start.0).expect("start is transient")])
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn gauss(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let m = a.len();
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for row in 0..m {
            if row != col {
                let f = a[row][col] / a[col][col];
                if f != 0.0 {
                    let pivot = a[col].clone();
                    for (x, p) in a[row][col..].iter_mut().zip(&pivot[col..]) {
                        *x -= f * p;
                    }
                }
            }
        }
    }
    (0..m).map(|i| a[i][m] / a[i][i]).collect()
}

/// Minimum hitting time over every deterministic policy on `allowed`
/// (RESET elsewhere), by enumeration.
pub fn brute_min_nav_time(kernel: &Kernel, allowed: &BTreeSet<StateId>, target: StateId) -> Option<f64> {
    if target == StateId::START {
        return Some(0.0);
    }
    let a_count = kernel.action_count();
    let free: Vec<usize> = allowed.iter().map(|s| s.0).filter(|&s| s != target.0).collect();
    let mut actions = vec![ActionId::RESET; kernel.state_count()];
    let total = a_count.pow(free.len() as u32);
    let mut best: Option<f64> = None;
    for code in 0..total {
        let mut c = code;
        for &x in &free {
            actions[x] = ActionId(c % a_count);
            c /= a_count;
        }
        if let Some(t) = chain_hitting_time(kernel, &actions, StateId::START, target) {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best
}

/// Memoized [`brute_min_nav_time`] keyed by (allowed set, target).
pub struct BruteOracle<'a> {
    kernel: &'a Kernel,
    memo: HashMap<(u64, usize), Option<f64>>,
}

impl<'a> BruteOracle<'a> {
    pub fn new(kernel: &'a Kernel) -> Self {
        assert!(kernel.state_count() <= 64);
        Self {
            kernel,
            memo: HashMap::new(),
        }
    }

    pub fn min_nav_time(&mut self, allowed: &BTreeSet<StateId>, target: StateId) -> Option<f64> {
        let mask = allowed.iter().fold(0u64, |m, s| m | (1 << s.0));
        let kernel = self.kernel;
        *self
            .memo
            .entry((mask, target.0))
            .or_insert_with(|| brute_min_nav_time(kernel, allowed, target))
    }

    /// `S_L` straight from the definition.
    pub fn s_l(&mut self, l: f64) -> BTreeSet<StateId> {
        let all: BTreeSet<StateId> = self.kernel.states().collect();
        self.kernel
            .states()
            .filter(|&s| self.min_nav_time(&all, s).is_some_and(|t| t <= l + 1e-9))
            .collect()
    }

    /// Union of `S^≺_L` over every total order that starts at the start
    /// state. Partial orders need not be enumerated: extending an order only
    /// enlarges the predecessor sets, which can only shorten navigation.
    pub fn s_arrow_l(&mut self, l: f64) -> BTreeSet<StateId> {
        let rest: Vec<StateId> = self.kernel.states().skip(1).collect();
        let mut union = BTreeSet::from([StateId::START]);
        for order in permutations(&rest) {
            let mut reached = BTreeSet::from([StateId::START]);
            for s in order {
                if self.min_nav_time(&reached, s).is_some_and(|t| t <= l + 1e-9) {
                    reached.insert(s);
                }
            }
            union.extend(reached);
        }
        union
    }
}

pub fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

/// A random kernel with sparse rows: each non-RESET row puts mass on one to
/// three successors, and about a third of the rows are deterministic.
pub fn random_kernel<R: Rng>(rng: &mut R, states: usize, actions: usize) -> Kernel {
    let mut b = KernelBuilder::new(states, actions).expect("valid sizes");
    for s in 0..states {
        for a in 1..actions {
            let support = if rng.random_bool(0.35) {
                1
            } else {
                rng.random_range(1..=3.min(states))
            };
            let mut next: Vec<usize> = (0..states).collect();
            for i in 0..support {
                let j = rng.random_range(i..states);
                next.swap(i, j);
            }
            let weights: Vec<f64> = (0..support).map(|_| rng.random_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let row: Vec<(StateId, f64)> = next[..support]
                .iter()
                .zip(&weights)
                .map(|(&j, w)| (StateId(j), w / total))
                .collect();
            b.set_row(StateId(s), ActionId(a), &row).expect("valid row");
        }
    }
    b.build_renormalized().expect("rows sum to one")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_hitting_time() {
        let mut b = KernelBuilder::new(2, 2).unwrap();
        b.set_row(StateId(0), ActionId(1), &[(StateId(0), 0.75), (StateId(1), 0.25)])
            .unwrap();
        b.set_deterministic(StateId(1), ActionId(1), StateId(1)).unwrap();
        let k = b.build().unwrap();
        let t = chain_hitting_time(&k, &[ActionId(1), ActionId(1)], StateId(0), StateId(1)).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(&[1, 2, 3, 4]).len(), 24);
    }
}
