use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hyperband::HyperbandParams;
use crate::optimizers::Rule;
use crate::protocols::{ProtocolConfig, TaskSpec, DEFAULT_DELTA, DEFAULT_REPETITIONS};
use crate::search::{SearchSpace, TuningMode};

pub const FORMAT_VERSION: u32 = 1;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "OPTBENCH_OUTPUT_DIR";

const DEFAULT_OUTPUT_DIR: &str = "results";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    End2end,
    DataAddition,
    Verify,
}

fn default_repetitions() -> usize {
    DEFAULT_REPETITIONS
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

/// One run, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub format_version: u32,
    pub protocol: Protocol,
    #[serde(default)]
    pub optimizers: Vec<Rule>,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    #[serde(default)]
    pub mode: TuningMode,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperband: Option<HyperbandParams>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<SearchSpace>,
    #[serde(default)]
    pub parallel: bool,
}

impl RunConfigFile {
    /// Parses a config, reporting the offending key path on failure.
    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfigFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Config {
                path,
                message: inner.to_string(),
            }
        })?;
        if config.format_version != FORMAT_VERSION {
            return Err(Error::Config {
                path: "format_version".into(),
                message: format!(
                    "unsupported format_version {}, expected {FORMAT_VERSION}",
                    config.format_version
                ),
            });
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The protocol parameters, validated.
    pub fn protocol_config(&self) -> Result<ProtocolConfig> {
        let hyperband = self.hyperband.ok_or_else(|| Error::Config {
            path: "hyperband".into(),
            message: "missing for this protocol".into(),
        })?;
        let config = ProtocolConfig {
            optimizers: self.optimizers.clone(),
            tasks: self.tasks.clone(),
            mode: self.mode,
            repetitions: self.repetitions,
            hyperband,
            delta: self.delta,
            master_seed: self.master_seed,
            space: self.space.clone().unwrap_or_default(),
            parallel: self.parallel,
        };
        config.validate()?;
        Ok(config)
    }

    /// Output directory: the environment override, else the config value,
    /// else `results`.
    pub fn resolve_output_dir(&self, env_override: Option<PathBuf>) -> PathBuf {
        env_override
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }
}
