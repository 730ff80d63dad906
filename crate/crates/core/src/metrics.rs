//! Ground-truth accounting of exploration steps and the theoretical bound on
//! them.
//!
//! A step is an exploration step when the hypothesis declared at that step
//! fails to cover `S→_L` of the kernel in force, or holds a policy whose
//! navigation time exceeds `(1+ε)L`. The declared hypothesis only changes at
//! logged events, so the run is split into spans of constant (kernel,
//! hypothesis) and each span is judged once.

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::cmp::{ActionId, ChangeSchedule, StateId};
use crate::explorer::{BudgetConstants, Hypothesis};
use crate::oracle::{hypothesis_valid, hypothesis_valid_given, s_arrow_l};
use crate::runlog::{Event, PhaseTag, RunLog};

/// A maximal run of steps sharing round, phase, kernel segment and declared
/// hypothesis. `start` and `end` are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: u64,
    pub end: u64,
    pub round: u32,
    pub phase: PhaseTag,
    pub segment: usize,
    pub hypothesis_size: usize,
    pub is_exploration: bool,
}

impl Span {
    pub fn len(&self) -> u64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub round: u32,
    pub phase: PhaseTag,
    pub hypothesis_size: usize,
    pub is_exploration: bool,
    /// Present when the log was recorded at step detail.
    pub unit: Option<u64>,
    pub state: Option<StateId>,
    pub action: Option<ActionId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accounting {
    pub spans: Vec<Span>,
    pub total_steps: u64,
}

impl Accounting {
    pub fn exploration_steps(&self) -> u64 {
        self.spans.iter().filter(|s| s.is_exploration).map(Span::len).sum()
    }

    /// Exploration steps within `[from, to]`.
    pub fn exploration_steps_between(&self, from: u64, to: u64) -> u64 {
        self.spans
            .iter()
            .filter(|s| s.is_exploration)
            .map(|s| {
                let lo = s.start.max(from);
                let hi = s.end.min(to);
                if lo > hi {
                    0
                } else {
                    hi - lo + 1
                }
            })
            .sum()
    }

    /// `(t, cumulative exploration steps up to t)` at every span end.
    pub fn cumulative(&self) -> Vec<(u64, u64)> {
        let mut total = 0;
        self.spans
            .iter()
            .map(|s| {
                if s.is_exploration {
                    total += s.len();
                }
                (s.end, total)
            })
            .collect()
    }

    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "cumulative_exploration"])?;
        for (t, c) in self.cumulative() {
            w.write_record([t.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// One record per step, with state and action filled from step events
    /// when the log has them.
    pub fn step_records<'a>(&'a self, log: &'a RunLog) -> impl Iterator<Item = StepRecord> + 'a {
        let mut steps = log
            .events
            .iter()
            .filter_map(|e| match e {
                Event::Step {
                    t, unit, state, action, ..
                } => Some((*t, *unit, *state, *action)),
                _ => None,
            })
            .peekable();
        self.spans
            .iter()
            .flat_map(|s| (s.start..=s.end).map(move |t| (s, t)))
            .map(move |(s, t)| {
                while steps.peek().is_some_and(|(st, ..)| *st < t) {
                    steps.next();
                }
                let detail = steps.peek().filter(|(st, ..)| *st == t).copied();
                StepRecord {
                    t,
                    round: s.round,
                    phase: s.phase,
                    hypothesis_size: s.hypothesis_size,
                    is_exploration: s.is_exploration,
                    unit: detail.map(|d| d.1),
                    state: detail.map(|d| d.2),
                    action: detail.map(|d| d.3),
                }
            })
    }
}

#[derive(Debug, Clone, Copy)]
enum Mark<'a> {
    Round(u32),
    Checking,
    Declared(usize, &'a Hypothesis),
}

fn spans_of<'a>(
    log: &'a RunLog,
    schedule: &ChangeSchedule,
    mut judge: impl FnMut(usize, usize, &Hypothesis) -> bool,
) -> Accounting {
    let total = log.total_steps();
    let empty = Hypothesis::new();
    let mut marks: Vec<(u64, Mark<'a>)> = Vec::new();
    let mut version = 0;
    for e in &log.events {
        match e {
            Event::RoundStarted { t, round, .. } => marks.push((t + 1, Mark::Round(*round))),
            Event::CheckingStarted { t, .. } => marks.push((t + 1, Mark::Checking)),
            Event::HypothesisDeclared {
                effective_from,
                hypothesis,
                ..
            } => {
                version += 1;
                marks.push((*effective_from, Mark::Declared(version, hypothesis)));
            }
            _ => {}
        }
    }
    // stable: marks at equal times keep log order
    marks.sort_by_key(|(t, _)| *t);
    let mut bounds: BTreeSet<u64> = marks.iter().map(|(t, _)| *t).collect();
    bounds.extend(schedule.change_times());
    bounds.insert(1);

    let mut spans = Vec::new();
    let (mut round, mut phase) = (0, PhaseTag::Building);
    let (mut hyp_version, mut hyp): (usize, &Hypothesis) = (0, &empty);
    let mut next_mark = 0;
    let starts: Vec<u64> = bounds.into_iter().filter(|&t| t <= total).collect();
    for (i, &start) in starts.iter().enumerate() {
        while next_mark < marks.len() && marks[next_mark].0 <= start {
            match marks[next_mark].1 {
                Mark::Round(r) => {
                    round = r;
                    phase = PhaseTag::Building;
                }
                Mark::Checking => phase = PhaseTag::Checking,
                Mark::Declared(v, h) => {
                    hyp_version = v;
                    hyp = h;
                }
            }
            next_mark += 1;
        }
        let end = starts.get(i + 1).map_or(total, |n| n - 1);
        let segment = schedule.segment_index_at(start);
        spans.push(Span {
            start,
            end,
            round,
            phase,
            segment,
            hypothesis_size: hyp.len(),
            is_exploration: !judge(segment, hyp_version, hyp),
        });
    }
    Accounting {
        spans,
        total_steps: total,
    }
}

/// Flag every step of `log` against the kernels of `schedule`.
pub fn account(log: &RunLog, schedule: &ChangeSchedule, l: f64, eps: f64) -> Accounting {
    let mut required: HashMap<usize, BTreeSet<StateId>> = HashMap::new();
    let mut verdicts: HashMap<(usize, usize), bool> = HashMap::new();
    spans_of(log, schedule, |segment, version, hyp| {
        *verdicts.entry((segment, version)).or_insert_with(|| {
            let kernel = &schedule.segments()[segment].kernel;
            let req = required.entry(segment).or_insert_with(|| s_arrow_l(kernel, l));
            hypothesis_valid_given(kernel, hyp, req, l, eps)
        })
    })
}

/// [`account`] without any memoization; every span is judged from scratch.
pub fn account_uncached(log: &RunLog, schedule: &ChangeSchedule, l: f64, eps: f64) -> Accounting {
    spans_of(log, schedule, |segment, _, hyp| {
        hypothesis_valid(&schedule.segments()[segment].kernel, hyp, l, eps)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub building_bound: f64,
    pub checking_bound: f64,
    pub total_bound: f64,
    pub observed_exploration_steps: Option<u64>,
}

/// High-probability bound on the exploration steps of the meta-algorithm
/// over `F = s_sizes.len()` settings, where `s_sizes[f]` is the number of
/// incrementally discoverable states within `(1+ε)L` in setting `f`.
pub fn theorem_bound(
    s_sizes: &[usize],
    action_count: usize,
    l: f64,
    eps: f64,
    delta: f64,
    constants: BudgetConstants,
) -> BoundReport {
    let f = s_sizes.len() as f64;
    let a = action_count as f64;
    let factor = |s: usize| {
        let s = s as f64;
        let log = (4.0 * PI * PI * constants.c2 * f * f * s * a * l / (3.0 * eps * delta)).ln();
        (constants.c1 * s * a * l.powi(3) / eps.powi(3), log)
    };
    let sum: f64 = s_sizes
        .iter()
        .map(|&s| {
            let (base, log) = factor(s);
            base * log.powi(3)
        })
        .sum();
    let max = s_sizes
        .iter()
        .map(|&s| {
            let (base, log) = factor(s);
            2.0 * base * log.powi(6)
        })
        .fold(0.0, f64::max);
    let building_bound = sum * sum;
    let checking_bound = f * max;
    BoundReport {
        building_bound,
        checking_bound,
        total_bound: building_bound + checking_bound,
        observed_exploration_steps: None,
    }
}

/// `|S→_{(1+ε)L}|` for every segment starting at or before `until`.
pub fn segment_sizes(schedule: &ChangeSchedule, l: f64, eps: f64, until: u64) -> Vec<usize> {
    schedule
        .segments()
        .iter()
        .filter(|s| s.start <= until.max(1))
        .map(|s| s_arrow_l(&s.kernel, (1.0 + eps) * l).len())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub total_steps: u64,
    pub exploration_steps: u64,
    pub rounds: u32,
    /// Settings encountered within the run.
    #[serde(rename = "F")]
    pub f: usize,
    pub change_times: Vec<u64>,
    pub bound_report: BoundReport,
    pub halted: bool,
    pub unsound_constants: bool,
}

pub fn summarize(log: &RunLog, schedule: &ChangeSchedule, accounting: &Accounting) -> RunSummary {
    let cfg = &log.header.config;
    let total = log.total_steps();
    let sizes = segment_sizes(schedule, cfg.l, cfg.eps, total);
    let mut bound = theorem_bound(
        &sizes,
        cfg.action_count,
        cfg.l,
        cfg.eps,
        cfg.delta,
        BudgetConstants::SOUND,
    );
    let exploration = accounting.exploration_steps();
    bound.observed_exploration_steps = Some(exploration);
    RunSummary {
        seed: log.header.seed,
        total_steps: total,
        exploration_steps: exploration,
        rounds: log.rounds(),
        f: sizes.len(),
        change_times: schedule.change_times().into_iter().filter(|&t| t <= total).collect(),
        bound_report: bound,
        halted: log.halted(),
        unsound_constants: log.header.unsound_constants,
    }
}
