//! Event log of one meta-algorithm run, stored as JSON lines: a header line
//! followed by one event per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmp::{ActionId, StateId};
use crate::explorer::Hypothesis;
use crate::mnm::MnmConfig;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("log is empty")]
    Empty,
}

/// How much per-step information a run records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogDetail {
    /// Rounds, phase changes, tests and hypothesis declarations only.
    #[default]
    Summary,
    /// Also one event per building quantum and per check-run.
    Quanta,
    /// Also one event per environment step.
    Steps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseTag {
    Building,
    Checking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    Horizon,
    StepCeiling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub seed: u64,
    pub horizon: u64,
    pub config: MnmConfig,
    pub unsound_constants: bool,
}

/// Times are global step indices: an event at `t` happened right after the
/// transition at step `t` (0 before the first step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    RoundStarted {
        t: u64,
        round: u32,
        delta_prime: f64,
    },
    StreamInitiated {
        t: u64,
        round: u32,
        stream: usize,
        quantum: u64,
    },
    Quantum {
        t_start: u64,
        t_end: u64,
        round: u32,
        quantum: u64,
        stream: usize,
        evaluation: bool,
    },
    BuildingCompleted {
        t: u64,
        round: u32,
        stream: usize,
        quanta: u64,
        states: usize,
    },
    CheckingStarted {
        t: u64,
        round: u32,
        k_size: usize,
        w: u64,
        alpha: f64,
        n: usize,
        addition_test_vacuous: bool,
    },
    CheckRun {
        t_start: u64,
        t_end: u64,
        round: u32,
        index: u64,
        part1_terminated: bool,
        part1_steps: u64,
        eval_failures: Vec<StateId>,
        seen: Vec<StateId>,
    },
    NewRoundTriggered {
        t: u64,
        round: u32,
        failures: usize,
        window: usize,
    },
    StateRemoved {
        t: u64,
        round: u32,
        state: StateId,
        failures: usize,
    },
    StateAdded {
        t: u64,
        round: u32,
        state: StateId,
        appearances: usize,
    },
    HypothesisDeclared {
        t: u64,
        round: u32,
        effective_from: u64,
        hypothesis: Hypothesis,
    },
    Step {
        t: u64,
        round: u32,
        phase: PhaseTag,
        /// Building stream, or check-run index during checking.
        unit: u64,
        state: StateId,
        action: ActionId,
        next: StateId,
    },
    Halted {
        t: u64,
        round: u32,
        phase: PhaseTag,
        phase_steps: u64,
    },
    RunEnded {
        t: u64,
        rounds: u32,
        reason: EndReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: RunHeader,
    pub events: Vec<Event>,
}

impl RunLog {
    pub fn new(header: RunHeader) -> Self {
        Self {
            header,
            events: Vec::new(),
        }
    }

    /// Steps the run took in total.
    pub fn total_steps(&self) -> u64 {
        self.events
            .iter()
            .rev()
            .find_map(|e| match e {
                Event::RunEnded { t, .. } => Some(*t),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn rounds(&self) -> u32 {
        self.events
            .iter()
            .filter(|e| matches!(e, Event::RoundStarted { .. }))
            .count() as u32
    }

    pub fn halted(&self) -> bool {
        self.events.iter().any(|e| matches!(e, Event::Halted { .. }))
    }

    /// Declared hypotheses with the first step at which each is in force.
    pub fn declarations(&self) -> impl Iterator<Item = (u64, &Hypothesis)> + '_ {
        self.events.iter().filter_map(|e| match e {
            Event::HypothesisDeclared {
                effective_from,
                hypothesis,
                ..
            } => Some((*effective_from, hypothesis)),
            _ => None,
        })
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> Result<(), LogError> {
        serde_json::to_writer(&mut out, &self.header).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut out, e).map_err(std::io::Error::from)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LogError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl(input: impl BufRead) -> Result<Self, LogError> {
        let mut lines = input.lines().enumerate();
        let (_, first) = lines.next().ok_or(LogError::Empty)?;
        let header = serde_json::from_str(&first?).map_err(|source| LogError::Parse { line: 1, source })?;
        let mut events = Vec::new();
        for (i, line) in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line).map_err(|source| LogError::Parse { line: i + 1, source })?);
        }
        Ok(Self { header, events })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LogError> {
        Self::read_jsonl(BufReader::new(File::open(path)?))
    }
}
