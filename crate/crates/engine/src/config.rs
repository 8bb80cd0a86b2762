//! Engine settings, read from one TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sandbox::RunOptions;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Registry and journal directory; `VIDPRIV_STATE_DIR` overrides it.
    pub state_dir: Option<PathBuf>,
    /// Parallel processor instances; defaults to the number of CPUs.
    pub workers: Option<usize>,
    /// Namespace isolation for processors (default on, best effort).
    pub isolate: Option<bool>,
    pub pad_to_timeout: bool,
    /// Total budget for statements without `CONSUMING`.
    pub query_epsilon: Option<f64>,
    /// Fixed noise seed. Only for reproducible experiments; leave unset in
    /// deployment so noise comes from the OS.
    pub seed: Option<u64>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| ConfigError::Toml {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn run_options(&self) -> RunOptions {
        let mut run = RunOptions::default();
        if let Some(w) = self.workers {
            run.workers = w;
        }
        if let Some(i) = self.isolate {
            run.isolate = i;
        }
        run.pad_to_timeout = self.pad_to_timeout;
        run
    }
}
