//! Resumable two-phase explorer for a stationary CMP.
//!
//! The run alternates between state discovery (sampling every action of
//! every known state) and policy evaluation (testing the optimistic policy
//! for the most promising candidate state). It consumes one transition at a
//! time through [`Resumable::next_action`] / [`Resumable::observe`], so a
//! scheduler can interleave many runs on one environment timeline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmp::{ActionId, StateId};
use crate::oracle::{Policy, NAV_TOLERANCE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExplorerError {
    #[error("invalid explorer parameter: {0}")]
    InvalidParameter(String),
    #[error("the run has terminated and takes no further actions")]
    Terminated,
    #[error("observed ({state}, {action}) but the run emitted ({expected_state}, {expected_action})")]
    ActionMismatch {
        state: StateId,
        action: ActionId,
        expected_state: StateId,
        expected_action: ActionId,
    },
    #[error("observe called without a preceding next_action")]
    NoPendingAction,
}

/// Constants of the step budget `C1·K·A·L³/ε³·ln(C2·K·A·L/(ε·δ'))³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetConstants {
    pub c1: f64,
    pub c2: f64,
}

impl BudgetConstants {
    /// Constants for which the budget is a high-probability bound.
    pub const SOUND: Self = Self {
        c1: 216.0 * 225.0 + 61.0,
        c2: 225.0,
    };

    pub fn is_sound(&self) -> bool {
        *self == Self::SOUND
    }
}

impl Default for BudgetConstants {
    fn default() -> Self {
        Self::SOUND
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorerConfig {
    pub delta: f64,
    pub eps: f64,
    pub l: f64,
    /// Total action count, RESET included.
    pub action_count: usize,
}

impl ExplorerConfig {
    pub fn new(delta: f64, eps: f64, l: f64, action_count: usize) -> Result<Self, ExplorerError> {
        let config = Self {
            delta,
            eps,
            l,
            action_count,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExplorerError> {
        let bad = |msg: String| Err(ExplorerError::InvalidParameter(msg));
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.l >= 1.0 && self.l.is_finite()) {
            return bad(format!("L must be at least 1, got {}", self.l));
        }
        if self.action_count < 2 {
            return bad(format!(
                "need RESET plus at least one other action, got {} actions",
                self.action_count
            ));
        }
        Ok(())
    }

    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    /// `⌈(1 + 1/ε)·L⌉`: discovery quantum length and evaluation episode cap.
    pub fn episode_cap(&self) -> u64 {
        ceil_u64((1.0 + 1.0 / self.eps) * self.l)
    }

    fn log_term(&self, k_size: usize) -> f64 {
        (k_size as f64 * self.action_count as f64 * self.l / (self.eps * self.delta)).ln()
    }

    /// Samples collected per (known state, action) pair in a discovery phase.
    pub fn discovery_samples(&self, k_size: usize) -> u64 {
        ceil_u64(4.0 * self.l * self.log_term(k_size)).max(1)
    }

    /// Episodes per policy evaluation: `⌈ln(K·A·L/(ε·δ))³⌉`.
    pub fn evaluation_episodes(&self, k_size: usize) -> u64 {
        ceil_u64(self.log_term(k_size).max(0.0).powi(3)).max(1)
    }

    /// Minimum empirical success fraction for accepting a policy.
    pub fn success_threshold(&self) -> f64 {
        1.0 - self.eps / (2.0 * (1.0 + self.eps))
    }

    /// Maximum mean episode length (timeouts counted at the cap) for
    /// accepting a policy.
    pub fn mean_length_threshold(&self) -> f64 {
        (1.0 + self.eps / 2.0) * self.l
    }
}

/// Ceiling that ignores floating-point dust just above an integer.
fn ceil_u64(x: f64) -> u64 {
    let c = (x - 1e-9).ceil();
    if c <= 0.0 {
        0
    } else if c >= u64::MAX as f64 {
        u64::MAX
    } else {
        c as u64
    }
}

/// Step budget for one run with the sound constants.
pub fn exploration_step_budget(config: &ExplorerConfig, k_size: usize, delta_prime: f64) -> Result<u64, ExplorerError> {
    exploration_step_budget_with(BudgetConstants::SOUND, config, k_size, delta_prime)
}

/// `⌈C1·K·A·L³/ε³·ln(C2·K·A·L/(ε·δ'))³⌉`.
pub fn exploration_step_budget_with(
    constants: BudgetConstants,
    config: &ExplorerConfig,
    k_size: usize,
    delta_prime: f64,
) -> Result<u64, ExplorerError> {
    Ok(ceil_u64(budget_value(constants, config, k_size, delta_prime)?))
}

pub(crate) fn budget_value(
    constants: BudgetConstants,
    config: &ExplorerConfig,
    k_size: usize,
    delta_prime: f64,
) -> Result<f64, ExplorerError> {
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(ExplorerError::InvalidParameter(format!(
            "delta' must lie in (0, 1), got {delta_prime}"
        )));
    }
    if k_size == 0 {
        return Err(ExplorerError::InvalidParameter("K must be positive".into()));
    }
    let kal = k_size as f64 * config.action_count as f64 * config.l;
    let arg = constants.c2 * kal / (config.eps * delta_prime);
    if arg <= 1.0 {
        return Err(ExplorerError::InvalidParameter(format!(
            "budget logarithm argument {arg} is not above 1"
        )));
    }
    Ok(constants.c1 * kal * config.l * config.l / config.eps.powi(3) * arg.ln().powi(3))
}

// ---------------------------------------------------------------------------
// Hypothesis
// ---------------------------------------------------------------------------

/// A set of discovered states with one navigation policy each.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Hypothesis {
    #[serde(with = "crate::oracle::pair_list")]
    policies: BTreeMap<StateId, Policy>,
}

impl Hypothesis {
    /// No states at all.
    pub fn new() -> Self {
        Self::default()
    }

    /// Only the start state, reached by RESET.
    pub fn initial() -> Self {
        let mut h = Self::new();
        h.insert(StateId::START, Policy::empty());
        h
    }

    pub fn insert(&mut self, s: StateId, policy: Policy) {
        self.policies.insert(s, policy);
    }

    pub fn remove(&mut self, s: StateId) -> Option<Policy> {
        self.policies.remove(&s)
    }

    pub fn contains(&self, s: StateId) -> bool {
        self.policies.contains_key(&s)
    }

    pub fn policy(&self, s: StateId) -> Option<&Policy> {
        self.policies.get(&s)
    }

    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.policies.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (StateId, &Policy)> + '_ {
        self.policies.iter().map(|(s, p)| (*s, p))
    }
}

// ---------------------------------------------------------------------------
// Phases and events
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    StateDiscovery,
    PolicyEvaluation,
    Terminated,
}

/// How long a scheduler should keep a run active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantumLength {
    /// Exactly this many steps.
    Steps(u64),
    /// Until the current evaluation episode ends; never more than `cap`.
    Episode { cap: u64 },
}

impl QuantumLength {
    pub fn max_steps(self) -> u64 {
        match self {
            QuantumLength::Steps(n) => n,
            QuantumLength::Episode { cap } => cap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    /// Target reached after this many policy steps.
    Success(u64),
    Timeout,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhaseEvent {
    EpisodeEnded(EpisodeOutcome),
    PolicyAccepted(StateId),
    PolicyFailed(StateId),
    DiscoveryBatchEnded,
    Terminated(Hypothesis),
}

// ---------------------------------------------------------------------------
// Policy evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationVerdict {
    pub accepted: bool,
    pub episodes: u64,
    pub successes: u64,
    pub mean_length: f64,
}

/// Runs a fixed number of episodes of one policy towards its target.
///
/// An episode starts when the environment is at the start state (RESET is
/// emitted first otherwise) and lasts at most `episode_cap − 1` policy steps,
/// so alignment plus episode always fits in one quantum.
#[derive(Debug, Clone)]
pub struct PolicyEvaluator {
    target: StateId,
    policy: Policy,
    episodes: u64,
    step_cap: u64,
    min_success: f64,
    max_mean: f64,
    done: u64,
    successes: u64,
    total_length: u64,
    in_episode: Option<u64>,
}

impl PolicyEvaluator {
    pub fn new(config: &ExplorerConfig, target: StateId, policy: Policy, k_size: usize) -> Self {
        Self {
            target,
            policy,
            episodes: config.evaluation_episodes(k_size.max(1)),
            step_cap: config.episode_cap().saturating_sub(1).max(1),
            min_success: config.success_threshold(),
            max_mean: config.mean_length_threshold(),
            done: 0,
            successes: 0,
            total_length: 0,
            in_episode: None,
        }
    }

    pub fn target(&self) -> StateId {
        self.target
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn episodes_required(&self) -> u64 {
        self.episodes
    }

    pub fn episodes_done(&self) -> u64 {
        self.done
    }

    pub fn is_complete(&self) -> bool {
        self.done >= self.episodes
    }

    pub fn in_episode(&self) -> bool {
        self.in_episode.is_some()
    }

    /// Discard the episode in progress; it is not counted.
    pub fn abort_episode(&mut self) {
        self.in_episode = None;
    }

    pub fn next_action(&mut self, current: StateId) -> ActionId {
        if self.in_episode.is_none() {
            if current != StateId::START {
                return ActionId::RESET;
            }
            self.in_episode = Some(0);
        }
        self.policy.action(current)
    }

    /// Feed the successor of the last emitted action.
    pub fn observe(&mut self, next: StateId) -> Option<EpisodeOutcome> {
        let taken = self.in_episode? + 1;
        let outcome = if next == self.target {
            self.successes += 1;
            self.total_length += taken;
            EpisodeOutcome::Success(taken)
        } else if taken >= self.step_cap {
            self.total_length += self.step_cap;
            EpisodeOutcome::Timeout
        } else {
            self.in_episode = Some(taken);
            return None;
        };
        self.in_episode = None;
        self.done += 1;
        Some(outcome)
    }

    pub fn verdict(&self) -> EvaluationVerdict {
        let n = self.done.max(1) as f64;
        let mean_length = self.total_length as f64 / n;
        let accepted = self.done > 0
            && self.successes as f64 / n >= self.min_success - 1e-12
            && mean_length <= self.max_mean + 1e-12;
        EvaluationVerdict {
            accepted,
            episodes: self.done,
            successes: self.successes,
            mean_length,
        }
    }
}

// ---------------------------------------------------------------------------
// Subroutine contract
// ---------------------------------------------------------------------------

/// A run that can be suspended between any two environment steps.
pub trait Resumable {
    fn phase(&self) -> Phase;

    /// Length of a quantum that starts now.
    fn quantum_length(&self) -> QuantumLength;

    /// Called when a scheduler hands the environment to this run. The next
    /// action moves the environment to the start state if it is elsewhere.
    fn begin_quantum(&mut self);

    fn next_action(&mut self, current: StateId) -> Result<ActionId, ExplorerError>;

    fn observe(&mut self, s: StateId, a: ActionId, next: StateId) -> Result<Vec<PhaseEvent>, ExplorerError>;

    fn hypothesis(&self) -> &Hypothesis;

    /// Transitions fed to this run so far.
    fn steps(&self) -> u64;
}

/// What a scheduler needs from a stationary exploration subroutine: fresh
/// runs, a high-probability step budget, and a stand-alone policy check.
pub trait Subroutine {
    type Run: Resumable;

    fn spawn(&self, delta: f64) -> Result<Self::Run, ExplorerError>;

    fn episode_cap(&self) -> u64;

    fn step_budget(&self, constants: BudgetConstants, k_size: usize, delta: f64) -> Result<u64, ExplorerError>;

    fn evaluator(&self, delta: f64, target: StateId, policy: Policy, k_size: usize) -> PolicyEvaluator;
}

impl Subroutine for ExplorerConfig {
    type Run = ExplorerRun;

    fn spawn(&self, delta: f64) -> Result<ExplorerRun, ExplorerError> {
        ExplorerRun::new(self.with_delta(delta))
    }

    fn episode_cap(&self) -> u64 {
        ExplorerConfig::episode_cap(self)
    }

    fn step_budget(&self, constants: BudgetConstants, k_size: usize, delta: f64) -> Result<u64, ExplorerError> {
        exploration_step_budget_with(constants, self, k_size, delta)
    }

    fn evaluator(&self, delta: f64, target: StateId, policy: Policy, k_size: usize) -> PolicyEvaluator {
        PolicyEvaluator::new(&self.with_delta(delta), target, policy, k_size)
    }
}

// ---------------------------------------------------------------------------
// The explorer run
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct TransitionCounts {
    total: u64,
    next: BTreeMap<StateId, u64>,
}

#[derive(Debug, Clone, Copy)]
struct Navigation {
    target: StateId,
    steps: u64,
}

#[derive(Debug, Clone)]
struct Candidate {
    state: StateId,
    evaluator: PolicyEvaluator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Emitted {
    Align,
    Discovery,
    Evaluation,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    state: StateId,
    action: ActionId,
    kind: Emitted,
}

#[derive(Debug, Clone)]
pub struct ExplorerRun {
    config: ExplorerConfig,
    phase: Phase,
    known: Hypothesis,
    observed: BTreeSet<StateId>,
    counts: BTreeMap<(StateId, ActionId), TransitionCounts>,
    nav: Option<Navigation>,
    candidate: Option<Candidate>,
    align: bool,
    pending: Option<Pending>,
    steps: u64,
}

impl ExplorerRun {
    pub fn new(config: ExplorerConfig) -> Result<Self, ExplorerError> {
        config.validate()?;
        Ok(Self {
            config,
            phase: Phase::StateDiscovery,
            known: Hypothesis::initial(),
            observed: BTreeSet::from([StateId::START]),
            counts: BTreeMap::new(),
            nav: None,
            candidate: None,
            align: true,
            pending: None,
            steps: 0,
        })
    }

    pub fn config(&self) -> &ExplorerConfig {
        &self.config
    }

    pub fn is_terminated(&self) -> bool {
        self.phase == Phase::Terminated
    }

    /// State whose policy is under evaluation.
    pub fn candidate(&self) -> Option<StateId> {
        self.candidate.as_ref().map(|c| c.state)
    }

    /// Number of non-RESET transitions observed from `(s, a)`.
    pub fn sample_count(&self, s: StateId, a: ActionId) -> u64 {
        self.counts.get(&(s, a)).map_or(0, |c| c.total)
    }

    pub fn observed_states(&self) -> &BTreeSet<StateId> {
        &self.observed
    }

    fn needed_samples(&self) -> u64 {
        self.config.discovery_samples(self.known.len())
    }

    fn least_sampled(&self, x: StateId, need: u64) -> Option<ActionId> {
        (1..self.config.action_count)
            .map(ActionId)
            .map(|a| (self.sample_count(x, a), a))
            .filter(|(n, _)| *n < need)
            .min()
            .map(|(_, a)| a)
    }

    fn under_sampled(&self, x: StateId, need: u64) -> bool {
        self.least_sampled(x, need).is_some()
    }

    fn discovery_complete(&self) -> bool {
        let need = self.needed_samples();
        self.known.states().all(|x| !self.under_sampled(x, need))
    }

    fn discovery_action(&mut self, current: StateId) -> ActionId {
        let need = self.needed_samples();
        if self.known.contains(current) {
            if let Some(a) = self.least_sampled(current, need) {
                self.nav = None;
                return a;
            }
        }
        let target = match self.nav {
            Some(n) if self.under_sampled(n.target, need) => n.target,
            _ => match self.known.states().find(|&x| self.under_sampled(x, need)) {
                Some(x) => {
                    self.nav = Some(Navigation { target: x, steps: 0 });
                    x
                }
                None => return ActionId::RESET,
            },
        };
        let cap = self.config.episode_cap();
        let nav = self.nav.as_mut().expect("navigation target set above");
        nav.steps += 1;
        if nav.steps > cap {
            // give up on this attempt and retry from the start state
            nav.steps = 0;
            return ActionId::RESET;
        }
        self.known
            .policy(target)
            .map_or(ActionId::RESET, |pi| pi.action(current))
    }

    fn record(&mut self, s: StateId, a: ActionId, next: StateId) {
        self.observed.insert(next);
        if a.is_reset() {
            return;
        }
        let c = self.counts.entry((s, a)).or_default();
        c.total += 1;
        *c.next.entry(next).or_default() += 1;
        if let Some(nav) = self.nav.as_mut() {
            if next == nav.target {
                nav.steps = 0;
            }
        }
    }

    fn enter_discovery(&mut self, events: &mut Vec<PhaseEvent>) {
        self.phase = Phase::StateDiscovery;
        self.candidate = None;
        self.nav = None;
        if self.discovery_complete() {
            events.push(PhaseEvent::DiscoveryBatchEnded);
            self.select_candidate(events);
        }
    }

    fn select_candidate(&mut self, events: &mut Vec<PhaseEvent>) {
        let mut best: Option<(f64, StateId, Policy)> = None;
        for &c in self.observed.iter().filter(|s| !self.known.contains(**s)) {
            if let Some((tau, pi)) = self.optimistic_plan(c) {
                if best.as_ref().is_none_or(|(b, _, _)| tau < *b) {
                    best = Some((tau, c, pi));
                }
            }
        }
        match best {
            Some((_, state, policy)) => {
                self.phase = Phase::PolicyEvaluation;
                let evaluator = PolicyEvaluator::new(&self.config, state, policy, self.known.len());
                self.candidate = Some(Candidate { state, evaluator });
            }
            None => {
                self.phase = Phase::Terminated;
                self.candidate = None;
                events.push(PhaseEvent::Terminated(self.known.clone()));
            }
        }
    }

    /// Optimistic minimum hitting time of `target` from the start state over
    /// policies on the known states, or `None` when it exceeds `L`.
    ///
    /// Model: known states, the target, and one aggregate for every other
    /// state (which is left by RESET). Each known (state, action) pair may
    /// move its empirical distribution by an L1 radius that shrinks with its
    /// sample count.
    fn optimistic_plan(&self, target: StateId) -> Option<(f64, Policy)> {
        let known: Vec<StateId> = self.known.states().collect();
        let k = known.len();
        let (t_idx, other) = (k, k + 1);
        let index = |s: StateId| {
            known
                .binary_search(&s)
                .unwrap_or(if s == target { t_idx } else { other })
        };
        let model_states = (k + 2) as f64;
        let a_count = self.config.action_count;

        // per (known state, non-RESET action): empirical distribution, radius
        let mut models: Vec<Vec<(Vec<f64>, f64)>> = Vec::with_capacity(k);
        for &x in &known {
            let mut per_action = Vec::with_capacity(a_count - 1);
            for a in (1..a_count).map(ActionId) {
                let mut p = vec![0.0; k + 2];
                let radius = match self.counts.get(&(x, a)) {
                    Some(c) if c.total > 0 => {
                        let n = c.total as f64;
                        for (s, m) in &c.next {
                            p[index(*s)] += *m as f64 / n;
                        }
                        let log = model_states * std::f64::consts::LN_2 + (a_count as f64).ln() + 2.0 * n.ln()
                            - self.config.delta.ln();
                        (2.0 * log / n).sqrt()
                    }
                    _ => 2.0,
                };
                per_action.push((p, radius));
            }
            models.push(per_action);
        }

        let limit = self.config.l + NAV_TOLERANCE;
        let mut v: Vec<f64> = vec![0.0; k + 2];
        let mut choice = vec![ActionId::RESET; k];
        let mut order: Vec<usize> = (0..k + 2).collect();
        for _ in 0..OPTIMISTIC_MAX_SWEEPS {
            order.sort_by(|&i, &j| v[i].total_cmp(&v[j]).then(i.cmp(&j)));
            let mut next = v.clone();
            let mut delta: f64 = 0.0;
            for xi in 0..k {
                let mut best = (1.0 + v[0], ActionId::RESET);
                for (ai, (p, radius)) in models[xi].iter().enumerate() {
                    let q = 1.0 + optimistic_expectation(p, *radius, &v, &order);
                    if q < best.0 {
                        best = (q, ActionId(ai + 1));
                    }
                }
                delta = delta.max((best.0 - v[xi]).abs());
                next[xi] = best.0;
                choice[xi] = best.1;
            }
            next[t_idx] = 0.0;
            next[other] = 1.0 + next[0];
            v = next;
            // values increase monotonically from zero: once past L they stay past L
            if v[0] > limit {
                return None;
            }
            if delta < OPTIMISTIC_THRESHOLD {
                break;
            }
        }
        let policy = Policy::from_map(known.iter().copied().zip(choice).collect());
        Some((v[0], policy))
    }
}

const OPTIMISTIC_MAX_SWEEPS: usize = 100_000;
const OPTIMISTIC_THRESHOLD: f64 = 1e-9;

/// `min Σ p(y) v(y)` over distributions within L1 distance `radius` of `p`;
/// `order` sorts indices by ascending `v`.
fn optimistic_expectation(p: &[f64], radius: f64, v: &[f64], order: &[usize]) -> f64 {
    let mut q = p.to_vec();
    let best = order[0];
    q[best] = (p[best] + radius / 2.0).min(1.0);
    let mut excess = q.iter().sum::<f64>() - 1.0;
    for &j in order.iter().rev() {
        if excess <= 0.0 {
            break;
        }
        if j == best {
            continue;
        }
        let take = excess.min(q[j]);
        q[j] -= take;
        excess -= take;
    }
    q.iter().zip(v).map(|(a, b)| a * b).sum()
}

impl Resumable for ExplorerRun {
    fn phase(&self) -> Phase {
        self.phase
    }

    fn quantum_length(&self) -> QuantumLength {
        let cap = self.config.episode_cap();
        match self.phase {
            Phase::PolicyEvaluation => QuantumLength::Episode { cap },
            _ => QuantumLength::Steps(cap),
        }
    }

    fn begin_quantum(&mut self) {
        self.align = true;
        if let Some(c) = self.candidate.as_mut() {
            c.evaluator.abort_episode();
        }
        if let Some(nav) = self.nav.as_mut() {
            nav.steps = 0;
        }
    }

    fn next_action(&mut self, current: StateId) -> Result<ActionId, ExplorerError> {
        if self.phase == Phase::Terminated {
            return Err(ExplorerError::Terminated);
        }
        if self.align && current != StateId::START {
            self.pending = Some(Pending {
                state: current,
                action: ActionId::RESET,
                kind: Emitted::Align,
            });
            return Ok(ActionId::RESET);
        }
        self.align = false;
        let (action, kind) = match self.phase {
            Phase::StateDiscovery => (self.discovery_action(current), Emitted::Discovery),
            _ => {
                let c = self.candidate.as_mut().expect("evaluation phase has a candidate");
                (c.evaluator.next_action(current), Emitted::Evaluation)
            }
        };
        self.pending = Some(Pending {
            state: current,
            action,
            kind,
        });
        Ok(action)
    }

    fn observe(&mut self, s: StateId, a: ActionId, next: StateId) -> Result<Vec<PhaseEvent>, ExplorerError> {
        let pending = self.pending.ok_or(ExplorerError::NoPendingAction)?;
        if pending.state != s || pending.action != a {
            return Err(ExplorerError::ActionMismatch {
                state: s,
                action: a,
                expected_state: pending.state,
                expected_action: pending.action,
            });
        }
        self.pending = None;
        self.steps += 1;
        self.record(s, a, next);
        let mut events = Vec::new();
        match pending.kind {
            Emitted::Align => {}
            Emitted::Discovery => {
                if self.discovery_complete() {
                    events.push(PhaseEvent::DiscoveryBatchEnded);
                    self.select_candidate(&mut events);
                }
            }
            Emitted::Evaluation => {
                let c = self.candidate.as_mut().expect("evaluation phase has a candidate");
                if let Some(outcome) = c.evaluator.observe(next) {
                    events.push(PhaseEvent::EpisodeEnded(outcome));
                }
                if c.evaluator.is_complete() {
                    let state = c.state;
                    if c.evaluator.verdict().accepted {
                        let policy = c.evaluator.policy().clone();
                        self.known.insert(state, policy);
                        events.push(PhaseEvent::PolicyAccepted(state));
                        self.enter_discovery(&mut events);
                    } else {
                        events.push(PhaseEvent::PolicyFailed(state));
                        self.select_candidate(&mut events);
                    }
                }
            }
        }
        Ok(events)
    }

    fn hypothesis(&self) -> &Hypothesis {
        &self.known
    }

    fn steps(&self) -> u64 {
        self.steps
    }
}

// ---------------------------------------------------------------------------
// Stand-alone driver
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum DriveError<E> {
    #[error(transparent)]
    Explorer(#[from] ExplorerError),
    #[error("environment step failed: {0}")]
    Environment(E),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveOutcome {
    /// Output of the run, absent if it hit the step cap first.
    pub hypothesis: Option<Hypothesis>,
    pub steps: u64,
    pub final_state: StateId,
}

/// Advance `run` from `start` until it terminates or has taken `cap` steps.
pub fn drive<R, E>(
    run: &mut R,
    start: StateId,
    cap: u64,
    mut step: impl FnMut(ActionId) -> Result<StateId, E>,
) -> Result<DriveOutcome, DriveError<E>>
where
    R: Resumable,
{
    let mut current = start;
    let mut taken = 0;
    while taken < cap {
        let a = run.next_action(current)?;
        let next = step(a).map_err(DriveError::Environment)?;
        taken += 1;
        let events = run.observe(current, a, next)?;
        current = next;
        if let Some(PhaseEvent::Terminated(h)) = events.into_iter().find(|e| matches!(e, PhaseEvent::Terminated(_))) {
            return Ok(DriveOutcome {
                hypothesis: Some(h),
                steps: taken,
                final_state: current,
            });
        }
    }
    Ok(DriveOutcome {
        hypothesis: None,
        steps: taken,
        final_state: current,
    })
}
