//! On-disk layout under the output root.
//!
//! ```text
//! <root>/data/<profile>-seed<seed>/dataset.fsra
//! <root>/runs/<profile>-seed<seed>-<ablation>/{config.toml, loss.csv, checkpoint.ckpt, metrics_*.csv, ...}
//! ```

use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::error::{Error, Result};

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "FEWSHOT_RIR_OUT";
pub const DEFAULT_ROOT: &str = "fewshot-rir-out";
pub const DATASET_FILE: &str = "dataset.fsra";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Root from [`OUT_ENV`], else [`DEFAULT_ROOT`] in the working directory.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from(DEFAULT_ROOT), PathBuf::from))
    }

    pub fn data_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.root.join("data").join(cfg.data_name())
    }

    pub fn dataset_path(&self, cfg: &RunConfig) -> PathBuf {
        self.data_dir(cfg).join(DATASET_FILE)
    }

    pub fn run_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.root.join("runs").join(cfg.run_name())
    }
}

/// Writes `text`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
