//! Round-based exploration for piecewise-stationary CMPs.
//!
//! Each round has a building phase, where copies of a stationary explorer
//! run as interleaved streams until one of them terminates with a
//! hypothesis, and a checking phase, where repeated check-runs feed a
//! sliding window of statistics that remove stale states, add new ones, or
//! start the next round.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmp::{ActionId, CmpError, Simulator, StateId};
use crate::explorer::{
    budget_value, BudgetConstants, ExplorerConfig, ExplorerError, Hypothesis, PhaseEvent, QuantumLength, Resumable,
    Subroutine,
};
use crate::oracle::Policy;
use crate::runlog::{EndReason, Event, LogDetail, PhaseTag, RunHeader, RunLog};

pub const DEFAULT_PHASE_STEP_CEILING: u64 = 100_000_000;

#[derive(Debug, Error)]
pub enum MnmError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Explorer(#[from] ExplorerError),
    #[error(transparent)]
    Environment(#[from] CmpError),
}

fn default_ceiling() -> u64 {
    DEFAULT_PHASE_STEP_CEILING
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MnmConfig {
    pub delta: f64,
    pub eps: f64,
    pub l: f64,
    /// Total action count, RESET included.
    pub action_count: usize,
    #[serde(default)]
    pub constants: BudgetConstants,
    /// Must be set whenever `constants` differ from the sound ones.
    #[serde(default)]
    pub unsound_constants: bool,
    /// Steps allowed in one building phase or one check-run before the run
    /// halts.
    #[serde(default = "default_ceiling")]
    pub phase_step_ceiling: u64,
}

impl MnmConfig {
    pub fn new(delta: f64, eps: f64, l: f64, action_count: usize) -> Result<Self, MnmError> {
        let config = Self {
            delta,
            eps,
            l,
            action_count,
            constants: BudgetConstants::SOUND,
            unsound_constants: false,
            phase_step_ceiling: DEFAULT_PHASE_STEP_CEILING,
        };
        config.validate()?;
        Ok(config)
    }

    /// Replace the budget constants; anything but the sound pair marks the
    /// configuration as unsound.
    pub fn with_constants(self, constants: BudgetConstants) -> Self {
        Self {
            constants,
            unsound_constants: !constants.is_sound(),
            ..self
        }
    }

    pub fn with_ceiling(self, phase_step_ceiling: u64) -> Self {
        Self {
            phase_step_ceiling,
            ..self
        }
    }

    pub fn validate(&self) -> Result<(), MnmError> {
        self.explorer().validate()?;
        let c = self.constants;
        if !(c.c1 > 0.0 && c.c2 > 0.0 && c.c1.is_finite() && c.c2.is_finite()) {
            return Err(MnmError::Config(format!(
                "C1 and C2 must be positive, got {} and {}",
                c.c1, c.c2
            )));
        }
        if !c.is_sound() && !self.unsound_constants {
            return Err(MnmError::Config(format!(
                "C1 = {}, C2 = {} differ from the sound constants; set unsound_constants to use them",
                c.c1, c.c2
            )));
        }
        if self.phase_step_ceiling == 0 {
            return Err(MnmError::Config("phase_step_ceiling must be positive".into()));
        }
        Ok(())
    }

    pub fn explorer(&self) -> ExplorerConfig {
        ExplorerConfig {
            delta: self.delta,
            eps: self.eps,
            l: self.l,
            action_count: self.action_count,
        }
    }
}

/// Confidence used in round `r`: `3δ / (4π²r²)`.
pub fn delta_prime(delta: f64, round: u32) -> f64 {
    let r = f64::from(round);
    3.0 * delta / (4.0 * PI * PI * r * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckingParams {
    pub k_size: usize,
    /// Step cap of the first part of a check-run.
    pub w: u64,
    pub alpha: f64,
    /// Window length in check-runs.
    pub n: usize,
}

pub fn checking_params(
    k_size: usize,
    action_count: usize,
    l: f64,
    eps: f64,
    delta_prime: f64,
    constants: BudgetConstants,
) -> Result<CheckingParams, MnmError> {
    if k_size == 0 {
        return Err(MnmError::Config("checking needs at least one known state".into()));
    }
    let explorer = ExplorerConfig {
        delta: delta_prime,
        eps,
        l,
        action_count,
    };
    let w = budget_value(constants, &explorer, k_size, delta_prime)?;
    let arg = k_size as f64 * action_count as f64 * l / (eps * delta_prime);
    if arg <= 1.0 {
        return Err(MnmError::Config(format!(
            "window logarithm argument {arg} is not above 1"
        )));
    }
    let log3 = arg.ln().powi(3);
    Ok(CheckingParams {
        k_size,
        w: (w - 1e-9).ceil().min(u64::MAX as f64) as u64,
        alpha: ((1.0 / delta_prime).ln() / (2.0 * log3)).sqrt(),
        n: (log3 - 1e-9).ceil() as usize,
    })
}

// ---------------------------------------------------------------------------
// Stream scheduling
// ---------------------------------------------------------------------------

/// Which stream each quantum of a building phase goes to.
///
/// Stream `p` (1-based) is initiated at quantum `(p−1)²+1`. The first
/// quantum goes to stream 1; when every stream has served equally often the
/// least recently active one is chosen, otherwise the one that has served
/// least (smallest id on ties).
#[derive(Debug, Clone, Default)]
pub struct StreamTable {
    served: Vec<u64>,
    last_active: Vec<Option<u64>>,
    quantum: u64,
}

impl StreamTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Index of the last processed quantum.
    pub fn quantum(&self) -> u64 {
        self.quantum
    }

    pub fn stream_count(&self) -> usize {
        self.served.len()
    }

    /// Quanta served by stream `p`.
    pub fn served(&self, p: usize) -> u64 {
        self.served[p - 1]
    }

    /// Stream initiated at quantum `q`, if any.
    pub fn initiated_at(q: u64) -> Option<usize> {
        let root = (q - 1).isqrt();
        (root * root == q - 1).then_some(root as usize + 1)
    }

    fn allocate(&self, q: u64) -> usize {
        if q == 1 {
            return 1;
        }
        let first = self.served[0];
        let all_equal = self.served.iter().all(|&s| s == first);
        let pick = if all_equal {
            (0..self.served.len()).min_by_key(|&i| (self.last_active[i], i))
        } else {
            (0..self.served.len()).min_by_key(|&i| (self.served[i], i))
        };
        pick.expect("at least one stream") + 1
    }

    /// Process the next quantum: returns (quantum index, newly initiated
    /// stream, active stream).
    pub fn advance(&mut self) -> (u64, Option<usize>, usize) {
        self.quantum += 1;
        let q = self.quantum;
        let new = Self::initiated_at(q);
        if new.is_some() {
            self.served.push(0);
            self.last_active.push(None);
        }
        let p = self.allocate(q);
        self.served[p - 1] += 1;
        self.last_active[p - 1] = Some(q);
        (q, new, p)
    }

    /// Spread of served counts among streams, ignoring the newest stream
    /// while it is still catching up with the others.
    pub fn settled_gap(&self) -> u64 {
        let n = self.served.len();
        if n <= 1 {
            return 0;
        }
        let older = &self.served[..n - 1];
        let older_min = *older.iter().min().unwrap();
        let considered: &[u64] = if self.served[n - 1] < older_min {
            older
        } else {
            &self.served
        };
        considered.iter().max().unwrap() - considered.iter().min().unwrap()
    }
}

// ---------------------------------------------------------------------------
// Checking-phase statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRunOutcome {
    pub part1_terminated: bool,
    pub part1_steps: u64,
    pub part1_output: Option<Hypothesis>,
    /// Known states whose policy failed evaluation in the second part.
    pub eval_failures: BTreeSet<StateId>,
}

impl CheckRunOutcome {
    pub fn seen_states(&self) -> BTreeSet<StateId> {
        self.part1_output
            .as_ref()
            .map(|h| h.states().collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestVerdict {
    pub new_round: bool,
    /// Check-runs whose first part hit the step cap.
    pub failures: usize,
    /// States to drop, with their evaluation failure counts.
    pub removals: Vec<(StateId, usize)>,
    /// States to add, with their appearance counts and latest policies.
    pub additions: Vec<(StateId, usize, Policy)>,
}

/// Apply the three window tests to a full window, in order: a new round if
/// too many first parts hit the cap; otherwise removals of known states whose
/// policies failed too often, then additions of states the first parts keep
/// finding.
pub fn apply_tests(
    window: &VecDeque<CheckRunOutcome>,
    hypothesis: &Hypothesis,
    params: &CheckingParams,
    delta_prime: f64,
) -> TestVerdict {
    let n = window.len() as f64;
    let threshold = params.alpha + delta_prime;
    let failures = window.iter().filter(|o| !o.part1_terminated).count();
    let mut verdict = TestVerdict {
        new_round: failures as f64 / n > threshold,
        failures,
        removals: Vec::new(),
        additions: Vec::new(),
    };
    if verdict.new_round {
        return verdict;
    }
    let mut known: BTreeSet<StateId> = hypothesis.states().collect();
    for s in hypothesis.states() {
        let b = window.iter().filter(|o| o.eval_failures.contains(&s)).count();
        if b as f64 / n > threshold {
            verdict.removals.push((s, b));
            known.remove(&s);
        }
    }
    let mut appearances: BTreeMap<StateId, (usize, Option<&Policy>)> = BTreeMap::new();
    for o in window {
        if let Some(h) = &o.part1_output {
            for (s, pi) in h.iter().filter(|(s, _)| !known.contains(s)) {
                let entry = appearances.entry(s).or_insert((0, None));
                entry.0 += 1;
                // later outcomes overwrite: the last found policy wins
                entry.1 = Some(pi);
            }
        }
    }
    for (s, (v, pi)) in appearances {
        if delta_prime - (1.0 - v as f64 / n) > params.alpha {
            verdict
                .additions
                .push((s, v, pi.expect("counted at least once").clone()));
        }
    }
    verdict
}

// ---------------------------------------------------------------------------
// Environment substreams
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    Building = 1,
    Probe = 2,
    Evaluation = 3,
    Reseeded = 4,
}

/// Simulator channel for one stream or check-run part: kind in the top 4
/// bits, round in the next 20, index in the low 40.
pub fn channel(kind: ChannelKind, round: u32, index: u64) -> u64 {
    ((kind as u64) << 60) | ((u64::from(round) & 0xF_FFFF) << 40) | (index & 0xFF_FFFF_FFFF)
}

// ---------------------------------------------------------------------------
// The meta-algorithm
// ---------------------------------------------------------------------------

pub struct Mnm<S: Subroutine = ExplorerConfig> {
    config: MnmConfig,
    subroutine: S,
    detail: LogDetail,
    reseeded: BTreeMap<usize, u64>,
}

impl Mnm<ExplorerConfig> {
    pub fn new(config: MnmConfig) -> Result<Self, MnmError> {
        let explorer = config.explorer();
        Self::with_subroutine(config, explorer)
    }
}

impl<S: Subroutine> Mnm<S> {
    pub fn with_subroutine(config: MnmConfig, subroutine: S) -> Result<Self, MnmError> {
        config.validate()?;
        Ok(Self {
            config,
            subroutine,
            detail: LogDetail::Summary,
            reseeded: BTreeMap::new(),
        })
    }

    pub fn log_detail(mut self, detail: LogDetail) -> Self {
        self.detail = detail;
        self
    }

    /// Draw the transitions of building stream `stream` from a different
    /// simulator substream, selected by `salt`. Other streams see exactly the
    /// same randomness as before.
    pub fn reseed_stream(mut self, stream: usize, salt: u64) -> Self {
        self.reseeded.insert(stream, salt);
        self
    }

    pub fn config(&self) -> &MnmConfig {
        &self.config
    }

    /// Run on `sim` until it has taken `horizon` steps in total, or until a
    /// building phase or check-run exceeds the step ceiling.
    pub fn run(&self, sim: &mut Simulator, horizon: u64) -> Result<RunLog, MnmError> {
        let header = RunHeader {
            seed: sim.seed(),
            horizon,
            config: self.config,
            unsound_constants: self.config.unsound_constants,
        };
        let mut engine = Engine {
            mnm: self,
            sim,
            horizon,
            log: RunLog::new(header),
            round: 0,
            phase: PhaseTag::Building,
            unit: 0,
            phase_steps: 0,
            declared: Hypothesis::new(),
        };
        let stop = engine.rounds();
        let t = engine.sim.steps_taken();
        let rounds = engine.round;
        let reason = match stop {
            Stop::Horizon => EndReason::Horizon,
            Stop::Ceiling => {
                log::warn!(
                    "halting at t = {t}: {:?} phase of round {rounds} exceeded {} steps",
                    engine.phase,
                    self.config.phase_step_ceiling
                );
                engine.log.events.push(Event::Halted {
                    t,
                    round: rounds,
                    phase: engine.phase,
                    phase_steps: engine.phase_steps,
                });
                EndReason::StepCeiling
            }
            Stop::Fail(e) => return Err(e),
        };
        engine.log.events.push(Event::RunEnded { t, rounds, reason });
        Ok(engine.log)
    }
}

enum Stop {
    Horizon,
    Ceiling,
    Fail(MnmError),
}

impl<E: Into<MnmError>> From<E> for Stop {
    fn from(e: E) -> Self {
        Stop::Fail(e.into())
    }
}

struct Engine<'a, S: Subroutine> {
    mnm: &'a Mnm<S>,
    sim: &'a mut Simulator,
    horizon: u64,
    log: RunLog,
    round: u32,
    phase: PhaseTag,
    unit: u64,
    phase_steps: u64,
    declared: Hypothesis,
}

fn terminated(events: Vec<PhaseEvent>) -> Option<Hypothesis> {
    events.into_iter().find_map(|e| match e {
        PhaseEvent::Terminated(h) => Some(h),
        _ => None,
    })
}

impl<S: Subroutine> Engine<'_, S> {
    fn t(&self) -> u64 {
        self.sim.steps_taken()
    }

    fn detail(&self) -> LogDetail {
        self.mnm.detail
    }

    fn step(&mut self, channel: u64, a: ActionId) -> Result<StateId, Stop> {
        if self.sim.steps_taken() >= self.horizon {
            return Err(Stop::Horizon);
        }
        if self.phase_steps >= self.mnm.config.phase_step_ceiling {
            return Err(Stop::Ceiling);
        }
        let state = self.sim.current_state();
        let next = self.sim.step_on(channel, a)?;
        self.phase_steps += 1;
        if self.detail() >= LogDetail::Steps {
            self.log.events.push(Event::Step {
                t: self.sim.steps_taken(),
                round: self.round,
                phase: self.phase,
                unit: self.unit,
                state,
                action: a,
                next,
            });
        }
        Ok(next)
    }

    fn rounds(&mut self) -> Stop {
        loop {
            self.round += 1;
            let dp = delta_prime(self.mnm.config.delta, self.round);
            self.log.events.push(Event::RoundStarted {
                t: self.t(),
                round: self.round,
                delta_prime: dp,
            });
            let built = match self.building(dp) {
                Ok(h) => h,
                Err(stop) => return stop,
            };
            self.declare(built);
            if let Err(stop) = self.checking(dp) {
                return stop;
            }
        }
    }

    fn declare(&mut self, hypothesis: Hypothesis) {
        self.declared = hypothesis;
        let t = self.t();
        self.log.events.push(Event::HypothesisDeclared {
            t,
            round: self.round,
            effective_from: t + 1,
            hypothesis: self.declared.clone(),
        });
    }

    fn building_channel(&self, stream: usize) -> u64 {
        match self.mnm.reseeded.get(&stream) {
            Some(&salt) => channel(ChannelKind::Reseeded, self.round, (salt << 24) ^ stream as u64),
            None => channel(ChannelKind::Building, self.round, stream as u64),
        }
    }

    fn building(&mut self, dp: f64) -> Result<Hypothesis, Stop> {
        self.phase = PhaseTag::Building;
        self.phase_steps = 0;
        let mut table = StreamTable::new();
        let mut runs: Vec<S::Run> = Vec::new();
        let result = loop {
            let (q, new, p) = table.advance();
            if let Some(p) = new {
                runs.push(self.mnm.subroutine.spawn(dp)?);
                self.log.events.push(Event::StreamInitiated {
                    t: self.t(),
                    round: self.round,
                    stream: p,
                    quantum: q,
                });
            }
            self.unit = p as u64;
            let ch = self.building_channel(p);
            let run = &mut runs[p - 1];
            run.begin_quantum();
            let length = run.quantum_length();
            // the alignment RESET, when one is needed, comes on top of the
            // quantum, so a stream's own steps never depend on the others
            let budget = length.max_steps() + u64::from(self.sim.current_state() != StateId::START);
            let t_start = self.sim.steps_taken() + 1;
            let mut used = 0;
            let mut output = None;
            while used < budget {
                let s = self.sim.current_state();
                let a = run.next_action(s)?;
                let next = self.step(ch, a)?;
                used += 1;
                let events = run.observe(s, a, next)?;
                let episode_over = events.iter().any(|e| matches!(e, PhaseEvent::EpisodeEnded(_)));
                if let Some(h) = terminated(events) {
                    output = Some(h);
                    break;
                }
                if episode_over && matches!(length, QuantumLength::Episode { .. }) {
                    break;
                }
            }
            if self.detail() >= LogDetail::Quanta {
                self.log.events.push(Event::Quantum {
                    t_start,
                    t_end: self.sim.steps_taken(),
                    round: self.round,
                    quantum: q,
                    stream: p,
                    evaluation: matches!(length, QuantumLength::Episode { .. }),
                });
            }
            if let Some(h) = output {
                self.log.events.push(Event::BuildingCompleted {
                    t: self.t(),
                    round: self.round,
                    stream: p,
                    quanta: q,
                    states: h.len(),
                });
                break (h, table.stream_count());
            }
        };
        for p in 1..=result.1 {
            let ch = self.building_channel(p);
            self.sim.release_channel(ch);
        }
        Ok(result.0)
    }

    fn checking(&mut self, dp: f64) -> Result<(), Stop> {
        let cfg = self.mnm.config;
        let params = checking_params(self.declared.len(), cfg.action_count, cfg.l, cfg.eps, dp, cfg.constants)?;
        let vacuous = dp <= params.alpha;
        if vacuous {
            log::info!(
                "round {}: the addition test cannot fire (delta' = {dp:.3e} <= alpha = {:.3e})",
                self.round,
                params.alpha
            );
        }
        self.phase = PhaseTag::Checking;
        self.log.events.push(Event::CheckingStarted {
            t: self.t(),
            round: self.round,
            k_size: params.k_size,
            w: params.w,
            alpha: params.alpha,
            n: params.n,
            addition_test_vacuous: vacuous,
        });
        let mut window: VecDeque<CheckRunOutcome> = VecDeque::with_capacity(params.n + 1);
        for index in 0.. {
            let outcome = self.check_run(dp, &params, index)?;
            window.push_back(outcome);
            if window.len() > params.n {
                window.pop_front();
            }
            if window.len() < params.n {
                continue;
            }
            let verdict = apply_tests(&window, &self.declared, &params, dp);
            let t = self.t();
            if verdict.new_round {
                self.log.events.push(Event::NewRoundTriggered {
                    t,
                    round: self.round,
                    failures: verdict.failures,
                    window: window.len(),
                });
                return Ok(());
            }
            if verdict.removals.is_empty() && verdict.additions.is_empty() {
                continue;
            }
            let mut next = self.declared.clone();
            for (state, failures) in verdict.removals {
                next.remove(state);
                self.log.events.push(Event::StateRemoved {
                    t,
                    round: self.round,
                    state,
                    failures,
                });
            }
            for (state, appearances, policy) in verdict.additions {
                next.insert(state, policy);
                self.log.events.push(Event::StateAdded {
                    t,
                    round: self.round,
                    state,
                    appearances,
                });
            }
            self.declare(next);
        }
        unreachable!("the check-run loop only exits through a verdict or a stop")
    }

    fn check_run(&mut self, dp: f64, params: &CheckingParams, index: u64) -> Result<CheckRunOutcome, Stop> {
        self.phase_steps = 0;
        self.unit = index;
        let t_start = self.sim.steps_taken() + 1;

        let probe = channel(ChannelKind::Probe, self.round, index);
        let mut run = self.mnm.subroutine.spawn(dp)?;
        run.begin_quantum();
        let mut part1_steps = 0;
        let mut output = None;
        while part1_steps < params.w {
            let s = self.sim.current_state();
            let a = run.next_action(s)?;
            let next = self.step(probe, a)?;
            part1_steps += 1;
            if let Some(h) = terminated(run.observe(s, a, next)?) {
                output = Some(h);
                break;
            }
        }
        self.sim.release_channel(probe);

        let eval = channel(ChannelKind::Evaluation, self.round, index);
        let mut eval_failures = BTreeSet::new();
        let policies: Vec<(StateId, Policy)> = self
            .declared
            .iter()
            .filter(|(s, _)| *s != StateId::START)
            .map(|(s, p)| (s, p.clone()))
            .collect();
        for (s, pi) in policies {
            let mut ev = self.mnm.subroutine.evaluator(dp, s, pi, params.k_size);
            while !ev.is_complete() {
                let a = ev.next_action(self.sim.current_state());
                let next = self.step(eval, a)?;
                ev.observe(next);
            }
            if !ev.verdict().accepted {
                eval_failures.insert(s);
            }
        }
        self.sim.release_channel(eval);

        let outcome = CheckRunOutcome {
            part1_terminated: output.is_some(),
            part1_steps,
            part1_output: output,
            eval_failures,
        };
        if self.detail() >= LogDetail::Quanta {
            self.log.events.push(Event::CheckRun {
                t_start,
                t_end: self.sim.steps_taken(),
                round: self.round,
                index,
                part1_terminated: outcome.part1_terminated,
                part1_steps,
                eval_failures: outcome.eval_failures.iter().copied().collect(),
                seen: outcome.seen_states().into_iter().collect(),
            });
        }
        Ok(outcome)
    }
}
