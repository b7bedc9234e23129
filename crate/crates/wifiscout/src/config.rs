use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;
use wifiscout_core::reward::{RewardConfig, DEFAULT_FULL_REWARD, DEFAULT_INTERVAL_THRESHOLD_SECS, DEFAULT_STARTING_POINTS};

pub const DEFAULT_CLUSTER_RADIUS_M: f64 = 100.0;
pub const DEFAULT_PORT: u16 = 8080;
pub const LOG_FILE_NAME: &str = "events.log";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

/// Service configuration, read from a TOML file. Every key is optional.
///
/// ```toml
/// starting_points = 0
/// full_reward = 10
/// interval_threshold_secs = 21600
/// cluster_radius_m = 100.0
/// port = 8080
/// data_dir = "wifiscout-data"
/// ```
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub starting_points: u64,
    pub full_reward: u64,
    pub interval_threshold_secs: i64,
    /// Linking radius for `/clusters` requests without a zoom level.
    pub cluster_radius_m: f64,
    pub port: u16,
    pub data_dir: PathBuf,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            starting_points: DEFAULT_STARTING_POINTS,
            full_reward: DEFAULT_FULL_REWARD,
            interval_threshold_secs: DEFAULT_INTERVAL_THRESHOLD_SECS,
            cluster_radius_m: DEFAULT_CLUSTER_RADIUS_M,
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("wifiscout-data"),
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config: Self = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Loads `path` if given, defaults otherwise.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.reward_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.cluster_radius_m.is_finite() && self.cluster_radius_m > 0.0) {
            return Err(ConfigError::Invalid("cluster_radius_m must be positive".into()));
        }
        Ok(())
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            starting_points: self.starting_points,
            full_reward: self.full_reward,
            interval_threshold_secs: self.interval_threshold_secs,
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.data_dir.join(LOG_FILE_NAME)
    }
}
