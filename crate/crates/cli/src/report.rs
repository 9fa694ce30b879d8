//! Run artifacts: CSV tables, the JSON manifest and the text summary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// One measured quantity compared against its budget (`measured ≤ tolerance`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: String,
    pub config_sha256: String,
    pub seed: u64,
    pub n_steps: usize,
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

/// Output directory that remembers every file written through it.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Writes `rows` under `header` as RFC 4180 CSV.
    pub fn csv<I, R>(&mut self, name: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)
            .with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(self, mut manifest: Manifest) -> Result<Manifest> {
        manifest.files = self.files;
        manifest.passed = manifest.checks.iter().all(|c| c.passed);
        let path = self.dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&path, text + "\n")
            .with_context(|| format!("cannot write {}", path.display()))?;
        Ok(manifest)
    }
}

/// Shortest decimal that parses back to the same `f64`; `-0` prints as `0`.
pub fn num(x: f64) -> String {
    (x + 0.0).to_string()
}
