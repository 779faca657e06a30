//! TOML engine configuration: run settings, clustering parameters and
//! backend profiles.
//!
//! ```toml
//! [run]
//! pass_threshold = 0.5
//! parallelism = 4
//!
//! [profiles.local]
//! base_url = "http://127.0.0.1:8700"
//! retries = 3
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::BackendProfile;
use crate::critic::DEFAULT_PASS_THRESHOLD;
use crate::knowledge::{ClusterParams, DEFAULT_PER_KIND_CAP, DEFAULT_TOP_K};

pub const BACKEND_URL_ENV: &str = "EMOFLOW_BACKEND_URL";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("unknown backend profile {0:?}")]
    UnknownProfile(String),
    #[error("invalid setting: {0}")]
    Invalid(String),
}

/// Settings that shape results; persisted with every run so a resume uses
/// the same values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub pass_threshold: f64,
    pub top_k: usize,
    pub per_kind_cap: usize,
    /// Source-similarity floor recorded against each output; never gates acceptance.
    pub preservation_floor: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            pass_threshold: DEFAULT_PASS_THRESHOLD,
            top_k: DEFAULT_TOP_K,
            per_kind_cap: DEFAULT_PER_KIND_CAP,
            preservation_floor: 0.7,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.pass_threshold) {
            return Err(ConfigError::Invalid(format!(
                "pass_threshold {} outside [0, 1]",
                self.pass_threshold
            )));
        }
        if self.top_k == 0 || self.per_kind_cap == 0 {
            return Err(ConfigError::Invalid("top_k and per_kind_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSection {
    #[serde(flatten)]
    pub settings: RunSettings,
    /// Branches executed concurrently. Does not affect results.
    pub parallelism: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            settings: RunSettings::default(),
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub run: RunSection,
    pub cluster: ClusterParams,
    /// Mock script (JSON) for the `mock` profile.
    pub mock_script: Option<PathBuf>,
    pub profiles: BTreeMap<String, BackendProfile>,
}

impl EngineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: EngineConfig = toml::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        if let (Some(script), Some(dir)) = (&cfg.mock_script, path.parent()) {
            if script.is_relative() {
                cfg.mock_script = Some(dir.join(script));
            }
        }
        cfg.run.settings.validate()?;
        Ok(cfg)
    }

    /// Profile by name. `mock` and `local` exist even when not configured;
    /// `base_url_override` (normally the environment variable) replaces the URL.
    pub fn profile(&self, name: &str, base_url_override: Option<&str>) -> Result<BackendProfile, ConfigError> {
        let mut profile = match self.profiles.get(name) {
            Some(p) => p.clone(),
            None => match name {
                "mock" => BackendProfile::default(),
                "local" => BackendProfile {
                    name: "local".into(),
                    base_url: "http://127.0.0.1:8700".into(),
                    ..BackendProfile::default()
                },
                other => return Err(ConfigError::UnknownProfile(other.into())),
            },
        };
        profile.name = name.to_string();
        if let Some(url) = base_url_override.filter(|u| !u.trim().is_empty()) {
            profile.base_url = url.trim().to_string();
        }
        Ok(profile)
    }
}
