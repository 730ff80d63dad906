use std::collections::BTreeMap;
use std::io::BufReader;
use std::sync::Arc;

use navex::explorer::BudgetConstants;
use navex::metrics::{account, account_uncached};
use navex::oracle::hypothesis_valid;
use navex::runlog::{EndReason, Event, LogDetail, RunLog};
use navex::{ActionId, ChangeSchedule, Kernel, KernelBuilder, Mnm, MnmConfig, Simulator, StateId};

/// s0 → s1 → s2 → s3 on action 1, each link failing back to s0 with
/// probability 0.2. With L = 2 only s0 and s1 are incrementally reachable.
fn leaky_chain() -> Kernel {
    let mut b = KernelBuilder::new(4, 2).unwrap();
    for s in 0..4 {
        let next = (s + 1).min(3);
        if next == s {
            b.set_deterministic(StateId(s), ActionId(1), StateId(s)).unwrap();
        } else {
            b.set_row(StateId(s), ActionId(1), &[(StateId(next), 0.8), (StateId(0), 0.2)])
                .unwrap();
        }
    }
    b.build().unwrap()
}

fn scaled() -> MnmConfig {
    MnmConfig::new(0.1, 1.0, 2.0, 2)
        .unwrap()
        .with_constants(BudgetConstants { c1: 1.0, c2: 1.0 })
}

#[test]
fn stationary_run_settles_in_one_round() {
    let kernel = leaky_chain();
    let schedule = Arc::new(ChangeSchedule::stationary(kernel.clone()));
    let mnm = Mnm::new(scaled()).unwrap().log_detail(LogDetail::Quanta);
    let mut sim = Simulator::new(schedule.clone(), 4);
    let log = mnm.run(&mut sim, 2_500_000).unwrap();

    assert_eq!(log.rounds(), 1);
    assert_eq!(log.total_steps(), 2_500_000);
    assert!(!log.halted());
    let (from, hyp) = log.declarations().next().expect("building completes");
    assert!(hypothesis_valid(&kernel, hyp, 2.0, 1.0));
    assert!(log.events.iter().any(|e| matches!(e, Event::CheckRun { .. })));

    let acc = account(&log, &schedule, 2.0, 1.0);
    assert_eq!(acc.exploration_steps(), from - 1);
    assert_eq!(acc.exploration_steps_between(from, log.total_steps()), 0);
    assert_eq!(acc, account_uncached(&log, &schedule, 2.0, 1.0));

    let text = log.to_jsonl_string();
    let back = RunLog::read_jsonl(BufReader::new(text.as_bytes())).unwrap();
    assert_eq!(back, log);
    assert_eq!(back.to_jsonl_string(), text);
}

#[test]
fn replays_are_identical() {
    let schedule = Arc::new(ChangeSchedule::stationary(leaky_chain()));
    let run = |seed| {
        let mut sim = Simulator::new(schedule.clone(), seed);
        Mnm::new(scaled())
            .unwrap()
            .log_detail(LogDetail::Quanta)
            .run(&mut sim, 300_000)
            .unwrap()
            .to_jsonl_string()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), run(2));
}

type Transition = (StateId, ActionId, StateId);

/// Each building stream's own transitions, without the alignment RESETs
/// that open some quanta.
fn own_steps(log: &RunLog) -> BTreeMap<u64, Vec<Transition>> {
    let starts: std::collections::BTreeSet<u64> = log
        .events
        .iter()
        .filter_map(|e| match e {
            Event::Quantum { t_start, .. } => Some(*t_start),
            _ => None,
        })
        .collect();
    let mut out: BTreeMap<u64, Vec<Transition>> = BTreeMap::new();
    for e in &log.events {
        if let Event::Step {
            t,
            unit,
            state,
            action,
            next,
            ..
        } = *e
        {
            if starts.contains(&t) && action.is_reset() && state != StateId::START {
                continue;
            }
            out.entry(unit).or_default().push((state, action, next));
        }
    }
    out
}

#[test]
fn reseeding_one_stream_leaves_the_others_alone() {
    let schedule = Arc::new(ChangeSchedule::stationary(leaky_chain()));
    let horizon = 150_000;
    let run = |mnm: Mnm| {
        let mut sim = Simulator::new(schedule.clone(), 21);
        mnm.log_detail(LogDetail::Steps).run(&mut sim, horizon).unwrap()
    };
    let base = own_steps(&run(Mnm::new(scaled()).unwrap()));
    let reseeded = own_steps(&run(Mnm::new(scaled()).unwrap().reseed_stream(3, 77)));
    assert!(base.len() > 10);
    for (stream, steps) in &base {
        let other = &reseeded[stream];
        let n = steps.len().min(other.len());
        if *stream == 3 {
            assert_ne!(steps[..n], other[..n]);
        } else {
            assert!(n > 0);
            assert_eq!(steps[..n], other[..n], "stream {stream}");
        }
    }
}

#[test]
fn the_step_ceiling_halts_the_run() {
    let schedule = Arc::new(ChangeSchedule::stationary(leaky_chain()));
    let mut sim = Simulator::new(schedule, 0);
    let log = Mnm::new(scaled().with_ceiling(5_000))
        .unwrap()
        .run(&mut sim, 1_000_000)
        .unwrap();
    assert!(log.halted());
    assert_eq!(log.total_steps(), 5_000);
    assert!(matches!(
        log.events.last(),
        Some(Event::RunEnded {
            reason: EndReason::StepCeiling,
            ..
        })
    ));
}
