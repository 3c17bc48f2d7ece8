use std::path::Path;

use serde::{Deserialize, Serialize};

use mucko::data::{read_json, DataError, PrepareOptions, SyntheticSpec, TraceOptions};
use mucko::model::ModelConfig;
use mucko::retrieval::ClassifierTrainConfig;
use mucko::train::TrainingConfig;

use crate::error::CliError;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

/// Sweep grids. `steps` drives the reasoning-depth report, `k_values` and
/// `m_values` the retrieval report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub steps: Vec<usize>,
    pub k_values: Vec<usize>,
    pub m_values: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            steps: vec![1, 2, 3],
            k_values: vec![50, 100, 150, 200],
            m_values: vec![1, 3, 5],
        }
    }
}

/// One file holding every tunable. Missing sections take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub format_version: u32,
    pub synthetic: SyntheticSpec,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub prepare: PrepareOptions,
    /// Train the relation classifier from labelled records; otherwise
    /// every relation passes the filter.
    pub relation_classifier: Option<ClassifierTrainConfig>,
    pub trace: TraceOptions,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: CONFIG_FORMAT_VERSION,
            synthetic: SyntheticSpec::default(),
            model: ModelConfig::desk(),
            training: TrainingConfig::default(),
            prepare: PrepareOptions::default(),
            relation_classifier: None,
            trace: TraceOptions::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let cfg: Self = read_json(path)?;
        if cfg.format_version != CONFIG_FORMAT_VERSION {
            return Err(DataError::Version {
                what: "config",
                found: cfg.format_version,
                expected: CONFIG_FORMAT_VERSION,
            }
            .into());
        }
        Ok(cfg)
    }

    /// Applies `--seed` to every seeded component.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.synthetic.seed = s;
            self.training.seed = s;
            if let Some(c) = self.relation_classifier.as_mut() {
                c.seed = s;
            }
        }
        self
    }
}
