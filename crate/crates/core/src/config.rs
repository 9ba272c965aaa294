//! TOML configuration surface shared by the CLI tools.
//!
//! One file carries the problem definition, sampler parameters, training
//! hyperparameters and evaluation thresholds; every section is optional and
//! falls back to its default.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::ProblemConfig;
use crate::eval::EvalConfig;
use crate::sampler::SamplerConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

pub fn parse_config(text: &str) -> Result<AppConfig, ConfigError> {
    let cfg: AppConfig = toml::from_str(text)?;
    cfg.problem.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    cfg.sampler.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if !(cfg.train.patience < cfg.train.max_epochs || cfg.train.max_epochs == 0) {
        return Err(ConfigError::Invalid("patience must be below max_epochs".into()));
    }
    Ok(cfg)
}

pub fn load_config(path: &std::path::Path) -> Result<AppConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

pub fn to_toml(cfg: &AppConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}
