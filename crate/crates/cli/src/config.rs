//! The optional JSON configuration file. Command-line flags override it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use leakdetect::detect::IldConfig;
use leakdetect::miest::EstimatorConfig;
use leakdetect::sweep::SweepGrid;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LEAKDETECT_OUT_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Used by `mi-estimate`, and by `detect` when `detect` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detect: Option<IldConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub benchmark: Option<SweepGrid>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: FileConfig = serde_json::from_str(text)?;
        if cfg.schema_version != SCHEMA_VERSION {
            bail!("schema_version {} is not supported (expected {SCHEMA_VERSION})", cfg.schema_version);
        }
        Ok(cfg)
    }

    pub fn estimator(&self) -> EstimatorConfig {
        self.estimator.clone().unwrap_or_default()
    }

    pub fn detect(&self) -> IldConfig {
        match (&self.detect, &self.estimator) {
            (Some(d), _) => d.clone(),
            (None, Some(e)) => IldConfig {
                estimator: e.clone(),
                ..IldConfig::default()
            },
            (None, None) => IldConfig::default(),
        }
    }

    pub fn benchmark(&self) -> SweepGrid {
        self.benchmark.clone().unwrap_or_default()
    }
}

/// `flag`, then the config file, then the environment, then `.`.
pub fn output_dir(flag: Option<&Path>, file: &FileConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| file.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}
