use crate::data::{AugmentConfig, CorpusSizes, DEFAULT_BATCH_SIZE};
use crate::error::{Error, Result};
use crate::losses::DistillConfig;
use crate::nn::TrunkConfig;
use crate::optim::{make_schedule, OptimizerKind, SchedulePreset, ScheduleOverrides, SgdConfig};
use crate::strategies::{InitialMode, StrategyKind, TaskSequence, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    pub sizes: CorpusSizes,
    /// Read the corpus from this `CLDS` file instead of generating it.
    pub path: Option<PathBuf>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            sizes: CorpusSizes::desk(),
            path: None,
        }
    }
}

/// One experiment, as stored in a JSON config file. Missing fields take
/// their desk-scale defaults; unknown fields are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub corpus: CorpusConfig,
    pub trunk: TrunkConfig,
    pub strategy: StrategyKind,
    pub order: TaskSequence,
    pub schedule: ScheduleOverrides,
    pub distill: DistillConfig,
    pub sgd: SgdConfig,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub augment: AugmentConfig,
    pub initial_mode: InitialMode,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            corpus: CorpusConfig::default(),
            trunk: TrunkConfig::desk(),
            strategy: StrategyKind::Cldrm,
            order: "1-2-3-4".parse().expect("canonical order"),
            schedule: ScheduleOverrides::desk(),
            distill: DistillConfig::default(),
            sgd: SgdConfig::default(),
            optimizer: OptimizerKind::Sgd,
            batch_size: DEFAULT_BATCH_SIZE,
            augment: AugmentConfig::default(),
            initial_mode: InitialMode::BestEpoch,
            out: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    /// Full-length schedule and the original per-task image counts.
    pub fn paper_scale(mut self) -> Self {
        self.schedule.preset = SchedulePreset::Paper;
        self.corpus.sizes = CorpusSizes::paper();
        self
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig {
            trunk: self.trunk.clone(),
            schedule: make_schedule(&self.schedule)?,
            sgd: self.sgd,
            optimizer: self.optimizer,
            batch_size: self.batch_size,
            augment: self.augment.clone(),
            distill: self.distill,
            initial_mode: self.initial_mode,
            ..TrainConfig::desk()
        };
        cfg.sgd.lr = cfg.schedule.phases[0].lr;
        Ok(cfg)
    }

    /// Checks every field against the preconditions of the module that
    /// consumes it, so a bad value fails before any training starts.
    pub fn validate(&self) -> Result<()> {
        self.corpus.sizes.validate()?;
        if self.trunk.input[1..] != [self.corpus.sizes.height, self.corpus.sizes.width] {
            return Err(Error::Config(format!(
                "trunk input {:?} does not match corpus images {}×{}",
                self.trunk.input, self.corpus.sizes.height, self.corpus.sizes.width
            )));
        }
        self.train_config()?.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> [u8; 32] {
        Sha256::digest(serde_json::to_vec(self).expect("config serializes")).into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }
}

/// Reads and validates a config file, or the config echoed in a run
/// manifest. Any failure is a config error that names the path.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let named = |e: Error| Error::Config(format!("{}: {e}", path.display()));
    let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| named(Error::Json(e)))?;
    let doc = match doc {
        serde_json::Value::Object(mut m) if m.contains_key("artifacts") && m.contains_key("config") => {
            m.remove("config").expect("checked")
        }
        other => other,
    };
    let cfg: ExperimentConfig = serde_json::from_value(doc).map_err(|e| named(Error::Json(e)))?;
    cfg.validate().map_err(named)?;
    Ok(cfg)
}
