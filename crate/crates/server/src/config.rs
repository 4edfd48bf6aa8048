//! Service configuration: a TOML file, then environment overrides.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_DATA_ROOT: &str = "MATCHSCOPE_DATA_ROOT";
pub const ENV_PORT: &str = "MATCHSCOPE_PORT";
pub const ENV_EXTRACTOR_URL: &str = "MATCHSCOPE_EXTRACTOR_URL";
pub const ENV_MAX_UPLOAD_BYTES: &str = "MATCHSCOPE_MAX_UPLOAD_BYTES";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid value {value:?} for {name}")]
    BadEnv { name: &'static str, value: String },
}

fn default_data_root() -> PathBuf {
    PathBuf::from("data")
}
fn default_host() -> String {
    "127.0.0.1".into()
}
fn default_port() -> u16 {
    8080
}
fn default_max_upload_bytes() -> usize {
    16 * 1024 * 1024
}
fn default_extractor_timeout_ms() -> u64 {
    30_000
}
fn default_extractor_retries() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_data_root")]
    pub data_root: PathBuf,
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    /// Feature extractor for raw image uploads; without one, image uploads
    /// fail with 502.
    #[serde(default)]
    pub extractor_url: Option<String>,
    #[serde(default = "default_max_upload_bytes")]
    pub max_upload_bytes: usize,
    #[serde(default = "default_extractor_timeout_ms")]
    pub extractor_timeout_ms: u64,
    /// Extra attempts after a failed extractor call.
    #[serde(default = "default_extractor_retries")]
    pub extractor_retries: u32,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self::new(default_data_root())
    }
}

impl ServerConfig {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self {
            data_root: data_root.into(),
            host: default_host(),
            port: default_port(),
            extractor_url: None,
            max_upload_bytes: default_max_upload_bytes(),
            extractor_timeout_ms: default_extractor_timeout_ms(),
            extractor_retries: default_extractor_retries(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn extractor_timeout(&self) -> Duration {
        Duration::from_millis(self.extractor_timeout_ms)
    }

    /// Overrides fields from `lookup(name)`; empty values are ignored.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let get = |name: &str| lookup(name).filter(|v| !v.trim().is_empty());
        if let Some(v) = get(ENV_DATA_ROOT) {
            self.data_root = PathBuf::from(v);
        }
        if let Some(v) = get(ENV_PORT) {
            self.port = v.trim().parse().map_err(|_| ConfigError::BadEnv { name: ENV_PORT, value: v })?;
        }
        if let Some(v) = get(ENV_EXTRACTOR_URL) {
            self.extractor_url = Some(v);
        }
        if let Some(v) = get(ENV_MAX_UPLOAD_BYTES) {
            self.max_upload_bytes =
                v.trim().parse().map_err(|_| ConfigError::BadEnv { name: ENV_MAX_UPLOAD_BYTES, value: v })?;
        }
        Ok(())
    }

    /// Reads `file` if given (defaults otherwise), then applies the process
    /// environment.
    pub fn load(file: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| ConfigError::Io { path: path.display().to_string(), source: e })?;
                Self::from_toml_str(&text)?
            }
            None => Self::default(),
        };
        config.apply_env(|name| std::env::var(name).ok())?;
        Ok(config)
    }
}
