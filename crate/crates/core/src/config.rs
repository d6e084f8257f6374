//! Configuration file: top-level serving keys plus one table per module,
//! each named after its config type.
//!
//! ```toml
//! t = 10
//! exclude_prioritized = true
//!
//! [PenaltyConfig]
//! dwell_coefficient = 0.01
//!
//! [DecayPolicy]
//! variant = "PerNodeAge"
//! parameter = 7
//!
//! [ShuffleConfig]
//! partition_length = 5
//! rng_seed = 42
//!
//! [MetricConfig]
//! window_capacity = 5
//! freshness_threshold = 0.5
//! max_decay_count = 10
//!
//! [ExperimentConfig]
//! users = 50
//! sessions = 30
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::{DecayPolicy, FeedbackConfig, PenaltyConfig};
use crate::freshness::MetricConfig;
use crate::shuffle::ShuffleConfig;
use crate::sim::ExperimentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    pub t: usize,
    pub exclude_prioritized: bool,
    #[serde(rename = "PenaltyConfig")]
    pub penalty: PenaltyConfig,
    #[serde(rename = "DecayPolicy")]
    pub decay: DecayPolicy,
    #[serde(rename = "ShuffleConfig")]
    pub shuffle: ShuffleConfig,
    #[serde(rename = "MetricConfig")]
    pub metric: MetricConfig,
    #[serde(rename = "ExperimentConfig")]
    pub experiment: ExperimentConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            t: 10,
            exclude_prioritized: true,
            penalty: PenaltyConfig::default(),
            decay: DecayPolicy::default(),
            shuffle: ShuffleConfig::default(),
            metric: MetricConfig::default(),
            experiment: ExperimentConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: EngineConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.feedback().validate()?;
        self.shuffle.validate()?;
        self.metric.validate()?;
        self.experiment.validate()
    }

    pub fn feedback(&self) -> FeedbackConfig {
        FeedbackConfig {
            t: self.t,
            penalty: self.penalty,
            decay: self.decay,
            exclude_prioritized: self.exclude_prioritized,
        }
    }
}
