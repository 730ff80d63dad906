//! Stationary kernels, piecewise-stationary change schedules and a seeded
//! simulator with a guaranteed RESET action.
//!
//! States and actions are dense indices. State 0 is the start state and
//! action 0 is RESET, which moves every state to the start state with
//! probability one.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on the sum of a transition row.
pub const ROW_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum CmpError {
    #[error("kernel needs at least one state")]
    NoStates,

    #[error("kernel needs at least two actions (RESET plus one), got {0}")]
    TooFewActions(usize),

    #[error("state {state} out of range (state count {count})")]
    StateOutOfRange { state: usize, count: usize },

    #[error("action {action} out of range (action count {count})")]
    ActionOutOfRange { action: usize, count: usize },

    #[error("row ({state}, {action}) has invalid probability {value}")]
    InvalidProbability { state: usize, action: usize, value: f64 },

    #[error("row ({state}, {action}) sums to {sum}, expected 1")]
    RowSum { state: usize, action: usize, sum: f64 },

    #[error("row ({state}, {action}) was never set")]
    MissingRow { state: usize, action: usize },

    #[error("RESET row of state {0} must move to the start state with probability 1")]
    BadResetRow(usize),

    #[error("schedule has no segments")]
    EmptySchedule,

    #[error("first segment must start at t=1, got {0}")]
    FirstSegmentStart(u64),

    #[error("segment start times must be strictly increasing ({prev} then {next})")]
    UnorderedSegments { prev: u64, next: u64 },

    #[error("segments starting at {0} and {1} have identical kernels")]
    IdenticalSegments(u64, u64),

    #[error("segment kernels disagree on dimensions")]
    DimensionMismatch,

    #[error("kernel file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Index of a state. `StateId::START` is the start state s0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct StateId(pub usize);

impl StateId {
    pub const START: StateId = StateId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Index of an action. `ActionId::RESET` is always available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub const RESET: ActionId = ActionId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }

    #[inline]
    pub fn is_reset(self) -> bool {
        self == Self::RESET
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_reset() {
            write!(f, "RESET")
        } else {
            write!(f, "a{}", self.0)
        }
    }
}

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

/// One stationary transition kernel P(s'|s,a).
///
/// Rows are stored sparsely, sorted by successor, without zero entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    states: usize,
    actions: usize,
    rows: Vec<Vec<(StateId, f64)>>,
}

impl Kernel {
    pub fn builder(states: usize, actions: usize) -> Result<KernelBuilder, CmpError> {
        KernelBuilder::new(states, actions)
    }

    /// Build from a dense `[s][a][s']` table. A state's table may hold
    /// `actions - 1` rows, in which case the RESET row is synthesized.
    pub fn from_dense(states: usize, actions: usize, probs: &[Vec<Vec<f64>>]) -> Result<Self, CmpError> {
        let mut b = KernelBuilder::new(states, actions)?;
        fill_builder(&mut b, probs)?;
        b.build()
    }

    #[inline]
    pub fn state_count(&self) -> usize {
        self.states
    }

    #[inline]
    pub fn action_count(&self) -> usize {
        self.actions
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.states).map(StateId)
    }

    pub fn actions(&self) -> impl Iterator<Item = ActionId> {
        (0..self.actions).map(ActionId)
    }

    /// Successor distribution of `(s, a)` as sorted `(s', p)` pairs.
    #[inline]
    pub fn row(&self, s: StateId, a: ActionId) -> &[(StateId, f64)] {
        &self.rows[s.0 * self.actions + a.0]
    }

    pub fn prob(&self, s: StateId, a: ActionId, next: StateId) -> f64 {
        self.row(s, a).iter().find(|(j, _)| *j == next).map_or(0.0, |(_, p)| *p)
    }

    pub fn to_dense(&self) -> Vec<Vec<Vec<f64>>> {
        (0..self.states)
            .map(|s| {
                (0..self.actions)
                    .map(|a| {
                        let mut dense = vec![0.0; self.states];
                        for &(j, p) in self.row(StateId(s), ActionId(a)) {
                            dense[j.0] = p;
                        }
                        dense
                    })
                    .collect()
            })
            .collect()
    }

    pub fn check_state(&self, s: StateId) -> Result<(), CmpError> {
        if s.0 < self.states {
            Ok(())
        } else {
            Err(CmpError::StateOutOfRange {
                state: s.0,
                count: self.states,
            })
        }
    }

    pub fn check_action(&self, a: ActionId) -> Result<(), CmpError> {
        if a.0 < self.actions {
            Ok(())
        } else {
            Err(CmpError::ActionOutOfRange {
                action: a.0,
                count: self.actions,
            })
        }
    }

    /// Sample a successor of `(s, a)` from a uniform draw in `[0, 1)`.
    fn sample(&self, s: StateId, a: ActionId, u: f64) -> StateId {
        let row = self.row(s, a);
        let mut acc = 0.0;
        for &(j, p) in row {
            acc += p;
            if u < acc {
                return j;
            }
        }
        // u landed in the rounding gap above the last cumulative sum
        row.last().expect("rows are never empty").0
    }
}

/// Incremental kernel construction with validation at `build`.
#[derive(Debug, Clone)]
pub struct KernelBuilder {
    states: usize,
    actions: usize,
    rows: Vec<Option<Vec<(StateId, f64)>>>,
}

impl KernelBuilder {
    pub fn new(states: usize, actions: usize) -> Result<Self, CmpError> {
        if states == 0 {
            return Err(CmpError::NoStates);
        }
        if actions < 2 {
            return Err(CmpError::TooFewActions(actions));
        }
        Ok(Self {
            states,
            actions,
            rows: vec![None; states * actions],
        })
    }

    pub fn set_row(&mut self, s: StateId, a: ActionId, row: &[(StateId, f64)]) -> Result<&mut Self, CmpError> {
        self.check(s, a)?;
        let mut merged: Vec<(StateId, f64)> = Vec::with_capacity(row.len());
        for &(j, p) in row {
            if j.0 >= self.states {
                return Err(CmpError::StateOutOfRange {
                    state: j.0,
                    count: self.states,
                });
            }
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(CmpError::InvalidProbability {
                    state: s.0,
                    action: a.0,
                    value: p,
                });
            }
            if p == 0.0 {
                continue;
            }
            match merged.iter_mut().find(|(k, _)| *k == j) {
                Some(entry) => entry.1 += p,
                None => merged.push((j, p)),
            }
        }
        merged.sort_by_key(|(j, _)| *j);
        self.rows[s.0 * self.actions + a.0] = Some(merged);
        Ok(self)
    }

    /// Point-mass transition `(s, a) -> next`.
    pub fn set_deterministic(&mut self, s: StateId, a: ActionId, next: StateId) -> Result<&mut Self, CmpError> {
        self.set_row(s, a, &[(next, 1.0)])
    }

    /// Validates every row; missing RESET rows are synthesized.
    pub fn build(self) -> Result<Kernel, CmpError> {
        self.finish(false)
    }

    /// Like [`build`](Self::build), but rows whose sum is off by more than
    /// the tolerance are rescaled (with a warning) instead of rejected.
    pub fn build_renormalized(self) -> Result<Kernel, CmpError> {
        self.finish(true)
    }

    fn finish(self, renormalize: bool) -> Result<Kernel, CmpError> {
        let (states, actions) = (self.states, self.actions);
        let mut rows = Vec::with_capacity(states * actions);
        for (idx, row) in self.rows.into_iter().enumerate() {
            let (s, a) = (idx / actions, idx % actions);
            if a == 0 {
                match &row {
                    Some(r) if !(r.len() == 1 && r[0] == (StateId::START, 1.0)) => {
                        return Err(CmpError::BadResetRow(s))
                    }
                    _ => rows.push(vec![(StateId::START, 1.0)]),
                }
                continue;
            }
            let mut row = row.ok_or(CmpError::MissingRow { state: s, action: a })?;
            let sum: f64 = row.iter().map(|(_, p)| p).sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                if !renormalize || sum <= 0.0 {
                    return Err(CmpError::RowSum {
                        state: s,
                        action: a,
                        sum,
                    });
                }
                log::warn!("renormalizing row ({s}, {a}) with sum {sum}");
                for entry in &mut row {
                    entry.1 /= sum;
                }
            }
            rows.push(row);
        }
        Ok(Kernel { states, actions, rows })
    }

    fn check(&self, s: StateId, a: ActionId) -> Result<(), CmpError> {
        if s.0 >= self.states {
            return Err(CmpError::StateOutOfRange {
                state: s.0,
                count: self.states,
            });
        }
        if a.0 >= self.actions {
            return Err(CmpError::ActionOutOfRange {
                action: a.0,
                count: self.actions,
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Change schedule
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Segment {
    pub start: u64,
    pub kernel: Arc<Kernel>,
}

/// Piecewise-stationary sequence of kernels. A segment starting at `t`
/// governs the transition taken at time `t`; the last segment never ends.
#[derive(Debug, Clone)]
pub struct ChangeSchedule {
    segments: Vec<Segment>,
}

impl ChangeSchedule {
    pub fn stationary(kernel: Kernel) -> Self {
        Self {
            segments: vec![Segment {
                start: 1,
                kernel: Arc::new(kernel),
            }],
        }
    }

    /// Rejects identical consecutive kernels.
    pub fn new(segments: Vec<(u64, Kernel)>) -> Result<Self, CmpError> {
        Self::assemble(segments, false)
    }

    /// Merges identical consecutive kernels into one segment.
    pub fn merged(segments: Vec<(u64, Kernel)>) -> Result<Self, CmpError> {
        Self::assemble(segments, true)
    }

    fn assemble(segments: Vec<(u64, Kernel)>, merge: bool) -> Result<Self, CmpError> {
        let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
        for (start, kernel) in segments {
            match out.last() {
                None if start != 1 => return Err(CmpError::FirstSegmentStart(start)),
                None => {}
                Some(prev) => {
                    if start <= prev.start {
                        return Err(CmpError::UnorderedSegments {
                            prev: prev.start,
                            next: start,
                        });
                    }
                    if prev.kernel.state_count() != kernel.state_count()
                        || prev.kernel.action_count() != kernel.action_count()
                    {
                        return Err(CmpError::DimensionMismatch);
                    }
                    if *prev.kernel == kernel {
                        if merge {
                            continue;
                        }
                        return Err(CmpError::IdenticalSegments(prev.start, start));
                    }
                }
            }
            out.push(Segment {
                start,
                kernel: Arc::new(kernel),
            });
        }
        if out.is_empty() {
            return Err(CmpError::EmptySchedule);
        }
        Ok(Self { segments: out })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Index of the segment covering time `t` (t ≥ 1).
    pub fn segment_index_at(&self, t: u64) -> usize {
        debug_assert!(t >= 1);
        self.segments.partition_point(|seg| seg.start <= t).saturating_sub(1)
    }

    pub fn kernel_at(&self, t: u64) -> &Kernel {
        &self.segments[self.segment_index_at(t)].kernel
    }

    /// Number of distinct settings F, the first counted at t=1.
    pub fn count_changes(&self) -> usize {
        self.segments.len()
    }

    /// Start times of every segment after the first.
    pub fn change_times(&self) -> Vec<u64> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    pub fn state_count(&self) -> usize {
        self.segments[0].kernel.state_count()
    }

    pub fn action_count(&self) -> usize {
        self.segments[0].kernel.action_count()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CmpError> {
        let text = std::fs::read_to_string(path)?;
        let file: ScheduleFile = serde_json::from_str(&text)?;
        file.into_schedule()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CmpError> {
        let file = ScheduleFile::from_schedule(self);
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }
}

/// On-disk kernel/schedule document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub states: usize,
    pub actions: usize,
    pub segments: Vec<SegmentFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentFile {
    pub start_time: u64,
    /// Dense `[s][a][s']`; RESET rows may be omitted.
    pub probs: Vec<Vec<Vec<f64>>>,
}

impl ScheduleFile {
    /// Rows that miss the sum tolerance are renormalized here, with a warning.
    pub fn into_schedule(self) -> Result<ChangeSchedule, CmpError> {
        let mut segments = Vec::with_capacity(self.segments.len());
        for seg in &self.segments {
            let mut b = KernelBuilder::new(self.states, self.actions)?;
            fill_builder(&mut b, &seg.probs)?;
            segments.push((seg.start_time, b.build_renormalized()?));
        }
        ChangeSchedule::new(segments)
    }

    pub fn from_schedule(schedule: &ChangeSchedule) -> Self {
        Self {
            states: schedule.state_count(),
            actions: schedule.action_count(),
            segments: schedule
                .segments()
                .iter()
                .map(|seg| SegmentFile {
                    start_time: seg.start,
                    probs: seg.kernel.to_dense(),
                })
                .collect(),
        }
    }
}

fn fill_builder(b: &mut KernelBuilder, probs: &[Vec<Vec<f64>>]) -> Result<(), CmpError> {
    let (states, actions) = (b.states, b.actions);
    if probs.len() != states {
        return Err(CmpError::Format(format!(
            "expected {states} state tables, found {}",
            probs.len()
        )));
    }
    for (s, table) in probs.iter().enumerate() {
        let offset = match table.len() {
            n if n == actions => 0,
            n if n + 1 == actions => 1,
            n => {
                return Err(CmpError::Format(format!(
                    "state {s} has {n} action rows, expected {actions} or {}",
                    actions - 1
                )))
            }
        };
        for (i, row) in table.iter().enumerate() {
            let a = i + offset;
            if a == 0 && row.is_empty() {
                continue;
            }
            if row.len() != states {
                return Err(CmpError::Format(format!(
                    "row ({s}, {a}) has {} entries, expected {states}",
                    row.len()
                )));
            }
            let sparse: Vec<(StateId, f64)> = row
                .iter()
                .enumerate()
                .filter(|(_, p)| **p != 0.0)
                .map(|(j, p)| (StateId(j), *p))
                .collect();
            b.set_row(StateId(s), ActionId(a), &sparse)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

/// Seeded simulator over a change schedule.
///
/// Successors are drawn from independent ChaCha substreams selected by a
/// caller-supplied channel (`step` uses channel 0). Equal seed, channels
/// and actions give an identical trajectory.
#[derive(Debug, Clone)]
pub struct Simulator {
    schedule: Arc<ChangeSchedule>,
    seed: u64,
    time: u64,
    state: StateId,
    channels: HashMap<u64, ChaCha8Rng>,
}

impl Simulator {
    pub fn new(schedule: Arc<ChangeSchedule>, seed: u64) -> Self {
        Self {
            schedule,
            seed,
            time: 1,
            state: StateId::START,
            channels: HashMap::new(),
        }
    }

    pub fn schedule(&self) -> &ChangeSchedule {
        &self.schedule
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Time index of the next transition (starts at 1).
    pub fn time(&self) -> u64 {
        self.time
    }

    /// Number of transitions taken so far.
    pub fn steps_taken(&self) -> u64 {
        self.time - 1
    }

    pub fn current_state(&self) -> StateId {
        self.state
    }

    pub fn step(&mut self, a: ActionId) -> Result<StateId, CmpError> {
        self.step_on(0, a)
    }

    pub fn step_on(&mut self, channel: u64, a: ActionId) -> Result<StateId, CmpError> {
        let kernel = self.schedule.kernel_at(self.time);
        kernel.check_action(a)?;
        let next = if a.is_reset() {
            StateId::START
        } else {
            let seed = self.seed;
            let rng = self.channels.entry(channel).or_insert_with(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(channel);
                rng
            });
            let u: f64 = rng.random();
            kernel.sample(self.state, a, u)
        };
        self.state = next;
        self.time += 1;
        Ok(next)
    }

    /// Drop the generator of a channel that will not be used again.
    pub fn release_channel(&mut self, channel: u64) {
        self.channels.remove(&channel);
    }
}
