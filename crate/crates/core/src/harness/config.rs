use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::benchmark::{ExcitationConfig, NoiseConfig, SplitSizes, SystemSpec};
use crate::error::{Error, Result};
use crate::lpv::ModelConfig;
use crate::trainer::TrainingConfig;

pub const CONFIG_VERSION: u32 = 1;

/// Overrides the configured output directory and nothing else.
pub const OUTPUT_DIR_ENV: &str = "LPVSUBNET_OUTPUT_DIR";

/// One reproducible experiment: data generation, model and training setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Master seed; every random stream is a child of it.
    pub seed: u64,
    pub system: SystemSpec,
    #[serde(default = "ExcitationConfig::at_system_rate")]
    pub excitation: ExcitationConfig,
    #[serde(default = "NoiseConfig::noiseless")]
    pub noise: NoiseConfig,
    pub splits: SplitSizes,
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    /// Relative paths are resolved against the directory of the config file.
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file, resolves `output_dir` and applies the
    /// environment override.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if cfg.output_dir.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.output_dir = dir.join(&cfg.output_dir);
            }
        }
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
            cfg.output_dir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} is not supported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.excitation.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if self.noise.snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("snr_db must be finite".into()));
        }
        if self.noise.sigma_e.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("sigma_e must be finite and non-negative".into()));
        }
        let sys = self.system.build()?;
        if sys.n_u() != self.model.n_u || sys.n_y() != self.model.n_y {
            return Err(Error::InvalidConfig(format!(
                "model (n_u, n_y) = ({}, {}) does not match the system ({}, {})",
                self.model.n_u,
                self.model.n_y,
                sys.n_u(),
                sys.n_y()
            )));
        }
        let lag = self.model.lag();
        for (name, n) in [("est", self.splits.est), ("val", self.splits.val)] {
            if n < lag + self.training.t_final.max(2) {
                return Err(Error::InvalidConfig(format!(
                    "{name} split of {n} samples is too short for lag {lag} and T {}",
                    self.training.t_final
                )));
            }
        }
        if self.splits.test < lag + 2 {
            return Err(Error::InvalidConfig(format!("test split too short for lag {lag}")));
        }
        Ok(())
    }

    pub fn data_path(&self, role: &str) -> PathBuf {
        self.output_dir.join(format!("{role}.csv"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.output_dir.join("model.json")
    }

    pub fn history_path(&self) -> PathBuf {
        self.output_dir.join("history.csv")
    }
}
