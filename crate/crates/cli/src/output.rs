//! Output directory: CSV tables, the JSON summary and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct InputDigest {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

/// Provenance of one run, enough to repeat it.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_paths: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub started_at: String,
    pub wall_clock_seconds: f64,
}

pub struct RunDir {
    dir: PathBuf,
    started: Instant,
    manifest: Manifest,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunDir {
    pub fn create(dir: &Path, command: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            manifest: Manifest {
                command: command.to_string(),
                args: std::env::args().skip(1).collect(),
                config_paths: BTreeMap::new(),
                seed: None,
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                started_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
                wall_clock_seconds: 0.0,
            },
        })
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    /// Records an input file and its digest.
    pub fn input(&mut self, role: &str, path: &Path) -> Result<()> {
        self.manifest.config_paths.insert(role.to_string(), path.display().to_string());
        self.manifest.inputs.push(InputDigest {
            role: role.to_string(),
            path: path.display().to_string(),
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    pub fn config_file(&mut self, path: Option<&Path>) -> Result<()> {
        match path {
            Some(p) => self.input("run_config", p),
            None => Ok(()),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Notes a file written by someone else into the directory.
    pub fn wrote(&mut self, name: &str) {
        log::info!("wrote {}", self.path(name).display());
        self.manifest.outputs.push(name.to_string());
    }

    pub fn csv<I>(&mut self, name: &str, header: &[String], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        self.wrote(name);
        Ok(())
    }

    pub fn summary(&mut self, value: &impl Serialize) -> Result<()> {
        let path = self.path("summary.json");
        std::fs::write(&path, serde_json::to_string_pretty(value)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        self.wrote("summary.json");
        Ok(())
    }

    /// Writes manifest.json; call last.
    pub fn finish(mut self) -> Result<()> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let path = self.path("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}
