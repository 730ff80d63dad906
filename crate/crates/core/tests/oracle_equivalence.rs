use std::collections::BTreeSet;

use navex::oracle::{min_nav_time, nav_time, optimal_policy, s_arrow_l, s_arrow_l_in_order, s_l, NavTime};
use navex::{Kernel, StateId};
use navex_testkit::{random_kernel, BruteOracle};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn same_time(fast: NavTime, slow: Option<f64>) -> bool {
    match (fast, slow) {
        (NavTime::Finite(a), Some(b)) => (a - b).abs() <= 1e-9,
        (NavTime::Infinite, None) => true,
        _ => false,
    }
}

fn subsets(n: usize) -> impl Iterator<Item = BTreeSet<StateId>> {
    (0u32..1 << n).map(move |m| (0..n).filter(|i| m & (1 << i) != 0).map(StateId).collect())
}

fn instance(seed: u64) -> (Kernel, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = rng.random_range(2..=6);
    let actions = rng.random_range(2..=3);
    let l = rng.random_range(1.0..=6.0);
    (random_kernel(&mut rng, states, actions), l)
}

#[test]
fn restricted_min_nav_time_matches_enumeration() {
    for seed in 0..60 {
        let (kernel, _) = instance(seed);
        let mut brute = BruteOracle::new(&kernel);
        for allowed in subsets(kernel.state_count()) {
            for target in kernel.states() {
                let fast = min_nav_time(&kernel, &allowed, target);
                let slow = brute.min_nav_time(&allowed, target);
                assert!(
                    same_time(fast, slow),
                    "seed {seed} {allowed:?} -> {target}: {fast} vs {slow:?}"
                );
            }
        }
    }
}

#[test]
fn discoverable_sets_match_union_over_orders() {
    let (mut nontrivial, mut strict) = (0, 0);
    for seed in 100..300 {
        let (kernel, l) = instance(seed);
        let mut brute = BruteOracle::new(&kernel);
        let arrow = s_arrow_l(&kernel, l);
        assert_eq!(arrow, brute.s_arrow_l(l), "seed {seed}, L = {l}");
        assert_eq!(s_l(&kernel, l), brute.s_l(l), "seed {seed}, L = {l}");
        nontrivial += usize::from(arrow.len() >= 3);
        strict += usize::from(arrow != s_l(&kernel, l));
    }
    // the sample must exercise the interesting cases
    assert!(nontrivial >= 50, "{nontrivial}");
    assert!(strict >= 3, "{strict}");
}

#[test]
fn closure_is_independent_of_scan_order() {
    for seed in 0..50 {
        let (kernel, l) = instance(seed);
        let mut order: Vec<StateId> = kernel.states().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xabc));
        assert_eq!(s_arrow_l_in_order(&kernel, l, &order), s_arrow_l(&kernel, l));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn radius_monotonicity(seed in any::<u64>(), l in 1.0f64..6.0, extra in 0.0f64..4.0) {
        let (kernel, _) = instance(seed);
        let small = s_arrow_l(&kernel, l);
        let large = s_arrow_l(&kernel, l + extra);
        prop_assert!(small.is_subset(&large));
        prop_assert!(s_l(&kernel, l).is_subset(&s_l(&kernel, l + extra)));
        prop_assert!(small.is_subset(&s_l(&kernel, l)));
        prop_assert!(small.contains(&StateId::START));
    }

    #[test]
    fn more_allowed_states_never_hurt(seed in any::<u64>(), mask in 0u32..64, grow in 0u32..64) {
        let (kernel, _) = instance(seed);
        let n = kernel.state_count();
        let pick = |m: u32| -> BTreeSet<StateId> { (0..n).filter(|i| m & (1 << i) != 0).map(StateId).collect() };
        let small = pick(mask);
        let large = pick(mask | grow);
        for target in kernel.states() {
            let a = min_nav_time(&kernel, &small, target).value();
            let b = min_nav_time(&kernel, &large, target).value();
            prop_assert!(b <= a + 1e-9 || (a.is_infinite() && b.is_infinite()));
        }
    }

    #[test]
    fn optimal_policy_realizes_min_nav_time(seed in any::<u64>()) {
        let (kernel, _) = instance(seed);
        let all: BTreeSet<StateId> = kernel.states().collect();
        for target in kernel.states() {
            let (best, pi) = optimal_policy(&kernel, &all, target);
            let realized = nav_time(&kernel, &pi, target);
            match (best, realized) {
                (NavTime::Finite(a), NavTime::Finite(b)) => prop_assert!((a - b).abs() <= 1e-9),
                (NavTime::Infinite, NavTime::Infinite) => {}
                _ => prop_assert!(false, "{best} vs {realized}"),
            }
        }
    }

    #[test]
    fn finite_nav_time_is_at_least_graph_distance(seed in any::<u64>()) {
        let (kernel, _) = instance(seed);
        let all: BTreeSet<StateId> = kernel.states().collect();
        let dist = bfs_distances(&kernel);
        for target in kernel.states() {
            if let NavTime::Finite(t) = min_nav_time(&kernel, &all, target) {
                prop_assert!(t + 1e-9 >= dist[target.0] as f64);
            }
        }
    }
}

fn bfs_distances(kernel: &Kernel) -> Vec<usize> {
    let mut dist = vec![usize::MAX; kernel.state_count()];
    dist[0] = 0;
    let mut frontier = vec![StateId::START];
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for x in frontier {
            for a in kernel.actions() {
                for &(j, p) in kernel.row(x, a) {
                    if p > 0.0 && dist[j.0] == usize::MAX {
                        dist[j.0] = dist[x.0] + 1;
                        next.push(j);
                    }
                }
            }
        }
        frontier = next;
    }
    dist
}
