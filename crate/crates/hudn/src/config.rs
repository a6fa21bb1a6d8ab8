//! Experiment configuration: one TOML file with a section per subsystem.
//!
//! ```toml
//! [run]
//! out_dir = "out"
//! seed = 7
//!
//! [scenario]
//! n_macro = 2
//! n_small = 20
//!
//! [train]
//! steps = 300
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};

use hudn_core::baselines::BaselineConfig;
use hudn_core::hetgraph::GraphConfig;
use hudn_core::objective::ChannelParams;
use hudn_core::radiomap::PathLossParams;
use hudn_core::rng::derive_seed;
use hudn_core::scenario::ScenarioConfig;
use hudn_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Environment variable that overrides `run.out_dir`.
pub const OUT_DIR_ENV: &str = "HUDN_OUT_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    /// Root seed. When set, the scenario, graph and training seeds are all
    /// derived from it and any per-section seed is ignored.
    pub seed: Option<u64>,
    /// Held-out events used by `eval`, `baseline`, `oracle` and `report`.
    pub eval_events: usize,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    /// Write a GRL checkpoint every this many steps; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seed: None,
            eval_events: 50,
            workers: 0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub scenario: ScenarioConfig,
    pub pathloss: PathLossParams,
    pub channel: ChannelParams,
    pub graph: GraphConfig,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.display().to_string(),
            message,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    /// Applies the root seed (if any) to every subsystem.
    pub fn resolve_seeds(&mut self) {
        if let Some(root) = self.run.seed {
            self.scenario.seed = derive_seed(root, "scenario");
            self.graph.sampling_seed = derive_seed(root, "graph");
            self.train.seed = derive_seed(root, "train");
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.scenario.validate().map_err(|e| invalid(&e))?;
        self.pathloss.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.baseline.validate().map_err(|e| invalid(&e))?;
        if !(self.channel.bandwidth > 0.0 && self.channel.sigma2 > 0.0) {
            return Err(ConfigError::Invalid("bandwidth and sigma2 must be positive".into()));
        }
        if self.run.eval_events == 0 {
            return Err(ConfigError::Invalid("eval_events must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical TOML rendering, hex encoded.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
