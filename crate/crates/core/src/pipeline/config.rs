use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::PreferenceVector;
use crate::sim::SimConfig;
use crate::trainer::{Smoothing, TrainConfig};

/// Version written into every file this crate produces.
pub const FORMAT_VERSION: u32 = 1;

/// Which reward components are replaced by model predictions during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardVariant {
    /// Observed sessions, clicks and volume.
    #[default]
    Observed,
    /// Predicted clicks, observed sessions.
    PredictedClicks,
    /// Predicted clicks and predicted sessions.
    PredictedSessions,
}

impl RewardVariant {
    pub fn needs_models(self) -> bool {
        self != RewardVariant::Observed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub prefs: PreferenceVector,
    pub variant: RewardVariant,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            prefs: PreferenceVector {
                w_s: 1.0,
                w_c: 0.5,
                w_v: 0.5,
            },
            variant: RewardVariant::Observed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpeConfig {
    /// Smoothing applied to the greedy policy for importance weights.
    pub smoothing: Smoothing,
    /// Episodes simulated by `eval-sim`.
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Deploy the smoothed rather than the greedy policy in `eval-sim`.
    pub smooth_ground_truth: bool,
}

impl Default for OpeConfig {
    fn default() -> Self {
        Self {
            smoothing: Smoothing::default(),
            eval_episodes: 2000,
            eval_seed: 12345,
            smooth_ground_truth: false,
        }
    }
}

/// Hyperparameter grid for `sweep`. Empty lists keep the base value from
/// the `reward` and `train` sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub w_s: Vec<f64>,
    pub w_c: Vec<f64>,
    pub w_v: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    pub learning_rate: Vec<f64>,
    /// Training runs per cell, seeded `train.seed + r`.
    pub replications: usize,
    /// Explicit seeds; when nonempty they replace `replications`.
    pub seeds: Vec<u64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            w_s: Vec::new(),
            w_c: Vec::new(),
            w_v: Vec::new(),
            alpha: Vec::new(),
            gamma: Vec::new(),
            learning_rate: Vec::new(),
            replications: 1,
            seeds: Vec::new(),
        }
    }
}

/// One grid point of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub prefs: PreferenceVector,
    pub alpha: f64,
    pub gamma: f64,
    pub learning_rate: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 && self.seeds.is_empty() {
            return Err(Error::Config("sweep.replications must be >= 1".into()));
        }
        Ok(())
    }

    pub fn seeds(&self, base_seed: u64) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.replications as u64).map(|r| base_seed.wrapping_add(r)).collect()
        } else {
            self.seeds.clone()
        }
    }

    /// Cartesian product in the order w_s, w_c, w_v, alpha, gamma, learning_rate
    /// (last varies fastest).
    pub fn cells(&self, reward: &RewardConfig, train: &TrainConfig) -> Vec<SweepCell> {
        let or = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
        let mut out = Vec::new();
        for &w_s in &or(&self.w_s, reward.prefs.w_s) {
            for &w_c in &or(&self.w_c, reward.prefs.w_c) {
                for &w_v in &or(&self.w_v, reward.prefs.w_v) {
                    for &alpha in &or(&self.alpha, train.alpha) {
                        for &gamma in &or(&self.gamma, train.gamma) {
                            for &learning_rate in &or(&self.learning_rate, train.learning_rate) {
                                out.push(SweepCell {
                                    prefs: PreferenceVector { w_s, w_c, w_v },
                                    alpha,
                                    gamma,
                                    learning_rate,
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Top-level configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub format_version: u32,
    pub sim: SimConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    pub ope: OpeConfig,
    pub sweep: SweepSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            sim: SimConfig::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            ope: OpeConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "format_version {} is not supported (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.sim.validate()?;
        self.reward.prefs.validate()?;
        self.train.validate()?;
        self.ope.smoothing.validate().map_err(|e| Error::Config(format!("ope.smoothing: {e}")))?;
        self.sweep.validate()
    }

    /// Hex sha256 of the canonical JSON serialization.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
