//! Run config file and flag resolution.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

/// Optional defaults for any command flag. Paths are relative to the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub fleet: Option<PathBuf>,
    pub programs: Option<PathBuf>,
    pub market: Option<PathBuf>,
    pub program_trace: Option<PathBuf>,
    pub clamp_negative: Option<bool>,
    pub iterations: Option<usize>,
    pub batch: Option<usize>,
    pub seed: Option<u64>,
    pub coin_price: Option<f64>,
    pub rt_price: Option<f64>,
    pub mc_samples: Option<usize>,
    pub surface_points: Option<usize>,
    pub risk_weights: Option<Vec<f64>>,
    pub learners: Option<usize>,
    pub horizon: Option<usize>,
    pub window_start: Option<usize>,
    pub window_len: Option<usize>,
}

pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const DEFAULT_BATCH: usize = 10;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_COIN_PRICE: f64 = 20_000.0;
pub const DEFAULT_RT_PRICE: f64 = 30.0;
pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const DEFAULT_LEARNERS: usize = 24;

pub struct Settings {
    pub file: RunConfig,
    /// The config file actually read, if any.
    pub path: Option<PathBuf>,
    base: Option<PathBuf>,
    config_dir: Option<PathBuf>,
}

impl Settings {
    pub fn load(explicit: Option<&Path>, config_dir: Option<&Path>) -> Result<Self> {
        let path = match explicit {
            Some(p) => Some(p.to_path_buf()),
            None => config_dir.map(|d| d.join("run.json")).filter(|p| p.is_file()),
        };
        let file = match &path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading run config {}", p.display()))?;
                serde_json::from_str(&text).map_err(minerflex::Error::Json).with_context(|| format!("parsing run config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        Ok(Self {
            base: path.as_ref().and_then(|p| p.parent().map(Path::to_path_buf)),
            file,
            path,
            config_dir: config_dir.map(Path::to_path_buf),
        })
    }

    fn relative_to_config(&self, p: &Option<PathBuf>) -> Option<PathBuf> {
        p.as_ref().map(|p| match &self.base {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.clone(),
        })
    }

    /// Flag, then run config, then `<config-dir>/<fallback>`.
    pub fn required_path(
        &self,
        flag: &Option<PathBuf>,
        pick: impl Fn(&RunConfig) -> &Option<PathBuf>,
        fallback: &str,
        what: &str,
    ) -> Result<PathBuf> {
        if let Some(p) = flag.clone().or_else(|| self.relative_to_config(pick(&self.file))) {
            return Ok(p);
        }
        if let Some(dir) = &self.config_dir {
            let p = dir.join(fallback);
            if p.is_file() {
                return Ok(p);
            }
        }
        bail!(Usage(format!("no {what} given: pass --{} or set it in the run config", fallback.trim_end_matches(".json"))))
    }

    pub fn optional_path(&self, flag: &Option<PathBuf>, pick: impl Fn(&RunConfig) -> &Option<PathBuf>) -> Option<PathBuf> {
        flag.clone().or_else(|| self.relative_to_config(pick(&self.file)))
    }
}

/// Flag, then config value, then default.
pub fn pick<T: Clone>(flag: Option<T>, file: &Option<T>, default: T) -> T {
    flag.or_else(|| file.clone()).unwrap_or(default)
}

/// Marks an error as a command-line usage problem (exit code 1).
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}
