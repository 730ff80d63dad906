//! Experiment configuration and its translation into a change schedule and
//! an algorithm configuration.

use std::path::{Path, PathBuf};

use navex::explorer::BudgetConstants;
use navex::mnm::{MnmConfig, DEFAULT_PHASE_STEP_CEILING};
use navex::runlog::LogDetail;
use navex::{ChangeSchedule, Kernel};
use serde::{Deserialize, Serialize};

use crate::env::{generate_env, EnvSpec};
use crate::perturb::{perturb, Perturbation};
use crate::seeds::{split, Purpose};
use crate::HarnessError;

fn sound_c1() -> f64 {
    BudgetConstants::SOUND.c1
}

fn sound_c2() -> f64 {
    BudgetConstants::SOUND.c2
}

fn default_ceiling() -> u64 {
    DEFAULT_PHASE_STEP_CEILING
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmParams {
    pub delta: f64,
    pub eps: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(default = "sound_c1")]
    pub c1: f64,
    #[serde(default = "sound_c2")]
    pub c2: f64,
    /// Required whenever `c1`/`c2` differ from the sound constants.
    #[serde(default)]
    pub unsound_constants: bool,
    #[serde(default = "default_ceiling")]
    pub step_ceiling: u64,
}

impl AlgorithmParams {
    pub fn constants(&self) -> BudgetConstants {
        BudgetConstants {
            c1: self.c1,
            c2: self.c2,
        }
    }

    pub fn mnm_config(&self, action_count: usize) -> Result<MnmConfig, HarnessError> {
        let config = MnmConfig {
            delta: self.delta,
            eps: self.eps,
            l: self.l,
            action_count,
            constants: self.constants(),
            unsound_constants: self.unsound_constants,
            phase_step_ceiling: self.step_ceiling,
        };
        config.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(config)
    }
}

/// Where the kernel of a new segment comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum SegmentSpec {
    /// Back to the kernel of the first segment.
    Base,
    /// A freshly generated environment of the same size.
    Env { env: EnvSpec },
    /// The previous segment's kernel with perturbations applied in order.
    Perturb { perturbations: Vec<Perturbation> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeSpec {
    /// First step governed by the new kernel.
    pub at: u64,
    #[serde(flatten)]
    pub segment: SegmentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    /// Fixes the environment across replicas; otherwise each replica seed
    /// derives its own.
    #[serde(default)]
    pub env_seed: Option<u64>,
    #[serde(default)]
    pub changes: Vec<ChangeSpec>,
    pub algorithm: AlgorithmParams,
    pub horizon: u64,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub log_detail: LogDetail,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: Self =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configs always serialize")
    }

    /// Checks that need no environment.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon == 0 {
            return Err(HarnessError::Config("horizon must be positive".into()));
        }
        let mut last = 1;
        for c in &self.changes {
            if c.at <= last {
                return Err(HarnessError::Config(format!(
                    "change times must be increasing and above 1, got {} after {last}",
                    c.at
                )));
            }
            last = c.at;
        }
        // action count is irrelevant to the remaining checks
        self.algorithm.mnm_config(2).map(|_| ())
    }

    /// The piecewise-stationary environment of replica `seed`.
    pub fn schedule(&self, seed: u64) -> Result<ChangeSchedule, HarnessError> {
        let env_seed = self.env_seed.unwrap_or_else(|| split(seed, Purpose::Environment));
        let base = generate_env(&self.env, env_seed).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut segments: Vec<(u64, Kernel)> = vec![(1, base.clone())];
        for (i, change) in self.changes.iter().enumerate() {
            let sub = split(self.env_seed.unwrap_or(seed), Purpose::Change(i as u32));
            let previous = &segments.last().expect("base segment").1;
            let kernel = match &change.segment {
                SegmentSpec::Base => base.clone(),
                SegmentSpec::Env { env } => {
                    generate_env(env, sub).map_err(|e| HarnessError::Config(format!("change {i}: {e}")))?
                }
                SegmentSpec::Perturb { perturbations } => {
                    let mut k = previous.clone();
                    for (j, p) in perturbations.iter().enumerate() {
                        k = perturb(&k, p, self.algorithm.l, self.algorithm.eps, sub ^ j as u64)
                            .map_err(|e| HarnessError::Config(format!("change {i}, perturbation {j}: {e}")))?;
                    }
                    k
                }
            };
            segments.push((change.at, kernel));
        }
        ChangeSchedule::new(segments).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Parse `a..b` (exclusive), `a..=b`, or a comma-separated list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = |e: std::num::ParseIntError| HarnessError::Config(format!("bad seed list {text:?}: {e}"));
    if let Some((a, b)) = text.split_once("..") {
        let lo: u64 = a.trim().parse().map_err(bad)?;
        let (hi, inclusive) = match b.strip_prefix('=') {
            Some(b) => (b.trim().parse::<u64>().map_err(bad)?, true),
            None => (b.trim().parse::<u64>().map_err(bad)?, false),
        };
        let seeds: Vec<u64> = if inclusive {
            (lo..=hi).collect()
        } else {
            (lo..hi).collect()
        };
        if seeds.is_empty() {
            return Err(HarnessError::Config(format!("seed range {text:?} is empty")));
        }
        return Ok(seeds);
    }
    text.split(',').map(|s| s.trim().parse::<u64>().map_err(bad)).collect()
}
