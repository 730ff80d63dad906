//! Seeded replica execution and on-disk artifacts.
//!
//! Each replica gets a directory `replica-<seed>` holding
//! - `events.jsonl`: the run log (header line, then one event per line),
//! - `exploration.csv`: `t,cumulative_exploration` at every accounting span end,
//! - `summary.json`: a [`RunSummary`],
//! - `steps.csv`: one row per step, only at step detail.
//!
//! The experiment directory additionally holds `config.json` and
//! `summary.json` with every replica's summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use navex::metrics::{account, summarize, Accounting, RunSummary};
use navex::runlog::{LogDetail, PhaseTag, RunLog};
use navex::{ChangeSchedule, Mnm, Simulator};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::HarnessError;

pub struct Replica {
    pub seed: u64,
    pub schedule: Arc<ChangeSchedule>,
    pub log: RunLog,
    pub accounting: Accounting,
    pub summary: RunSummary,
    pub detail: LogDetail,
}

/// Run one replica in memory.
pub fn run_replica(config: &ExperimentConfig, seed: u64) -> Result<Replica, HarnessError> {
    let schedule = Arc::new(config.schedule(seed)?);
    let mnm_config = config.algorithm.mnm_config(schedule.action_count())?;
    let mnm = Mnm::new(mnm_config)
        .map_err(|e| HarnessError::Config(e.to_string()))?
        .log_detail(config.log_detail);
    let mut sim = Simulator::new(schedule.clone(), seed);
    let log = mnm.run(&mut sim, config.horizon)?;
    let accounting = account(&log, &schedule, config.algorithm.l, config.algorithm.eps);
    let summary = summarize(&log, &schedule, &accounting);
    Ok(Replica {
        seed,
        schedule,
        log,
        accounting,
        summary,
        detail: config.log_detail,
    })
}

pub fn replica_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("replica-{seed:04}"))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct StepRow {
    t: u64,
    round: u32,
    phase: &'static str,
    hypothesis_size: usize,
    is_exploration: bool,
    unit: Option<u64>,
    state: Option<usize>,
    action: Option<usize>,
}

pub fn write_replica(replica: &Replica, dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    replica.log.save(dir.join("events.jsonl"))?;
    replica
        .accounting
        .write_csv(BufWriter::new(File::create(dir.join("exploration.csv"))?))?;
    write_json(&dir.join("summary.json"), &replica.summary)?;
    if replica.detail >= LogDetail::Steps {
        let mut w = csv::Writer::from_path(dir.join("steps.csv"))?;
        for r in replica.accounting.step_records(&replica.log) {
            w.serialize(StepRow {
                t: r.t,
                round: r.round,
                phase: match r.phase {
                    PhaseTag::Building => "building",
                    PhaseTag::Checking => "checking",
                },
                hypothesis_size: r.hypothesis_size,
                is_exploration: r.is_exploration,
                unit: r.unit,
                state: r.state.map(|s| s.0),
                action: r.action.map(|a| a.0),
            })?;
        }
        w.flush()?;
    }
    Ok(())
}

pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub summaries: Vec<RunSummary>,
}

impl ExperimentReport {
    pub fn halted(&self) -> Vec<u64> {
        self.summaries.iter().filter(|s| s.halted).map(|s| s.seed).collect()
    }
}

/// Run every seed of `config` in a worker pool and write all artifacts
/// under `output_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    seeds: &[u64],
    output_dir: &Path,
) -> Result<ExperimentReport, HarnessError> {
    if seeds.is_empty() {
        return Err(HarnessError::Config("no seeds to run".into()));
    }
    std::fs::create_dir_all(output_dir)?;
    std::fs::write(output_dir.join("config.json"), config.to_json())?;
    let summaries = seeds
        .par_iter()
        .map(|&seed| {
            let replica = run_replica(config, seed)?;
            write_replica(&replica, &replica_dir(output_dir, seed))?;
            log::info!(
                "seed {seed}: {} steps, {} rounds, {} exploration steps",
                replica.summary.total_steps,
                replica.summary.rounds,
                replica.summary.exploration_steps
            );
            Ok(replica.summary)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    write_json(&output_dir.join("summary.json"), &summaries)?;
    Ok(ExperimentReport {
        output_dir: output_dir.to_path_buf(),
        summaries,
    })
}
