//! Tunable constants, loadable from a JSON defaults file.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionConfig;
use crate::metaphor::MetaphorConfig;
use crate::perception::DangerConfig;
use crate::replay::DEFAULT_MAX_SKEW;

/// Environment variable naming a defaults file.
pub const CONFIG_ENV: &str = "DAARIA_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub danger: DangerConfig,
    pub attention: AttentionConfig,
    pub metaphor: MetaphorConfig,
    /// Half-width of the bird view (m).
    pub bird_extent_m: f64,
    /// Bird view raster size (px).
    pub bird_size_px: usize,
    pub max_skew: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            danger: DangerConfig::default(),
            attention: AttentionConfig::default(),
            metaphor: MetaphorConfig::default(),
            bird_extent_m: 80.0,
            bird_size_px: 400,
            max_skew: DEFAULT_MAX_SKEW,
        }
    }
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: shown,
            message: e.to_string(),
        })
    }

    /// Reads the file named by `DAARIA_CONFIG`, or the built-in defaults.
    pub fn from_env() -> Result<Self, ConfigError> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(p),
            _ => Ok(Self::default()),
        }
    }
}
