//! Output directory layout: CSV artifacts, the resolved configuration and a
//! JSON manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{Map, Value};
use submcmc::{ChainTrace, Error, Result};

use crate::config::RawConfig;

pub const CONFIG_ECHO: &str = "config.resolved";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Serialize)]
pub struct ChainRecord {
    pub chain: u64,
    pub seed: u64,
    pub sampler: String,
    pub iterations: usize,
    pub acceptance_rate: f64,
    pub sign_rate: f64,
    pub u_acceptance_rate: Option<f64>,
    pub invalid_estimates: usize,
    pub divergences: usize,
    pub evaluations: u64,
    pub wall_time_secs: f64,
}

impl ChainRecord {
    pub fn from_trace(t: &ChainTrace, burn_in: usize) -> Self {
        Self {
            chain: t.chain,
            seed: t.seed,
            sampler: t.sampler.to_string(),
            iterations: t.len(),
            acceptance_rate: t.acceptance_rate(burn_in),
            sign_rate: t.sign_rate(burn_in),
            u_acceptance_rate: (!t.u_accept.is_empty()).then(|| t.u_acceptance_rate()),
            invalid_estimates: t.invalid_estimates,
            divergences: t.divergences,
            evaluations: t.evaluations,
            wall_time_secs: t.wall_time_secs,
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    git_hash: &'a str,
    wall_time_secs: f64,
    config: &'a str,
    files: &'a [String],
    derived: &'a Map<String, Value>,
    chains: &'a [ChainRecord],
}

/// Collects the files of one invocation and writes the manifest last.
pub struct Artifacts {
    dir: PathBuf,
    command: String,
    started: Instant,
    files: Vec<String>,
    pub derived: Map<String, Value>,
    pub chains: Vec<ChainRecord>,
}

impl Artifacts {
    pub fn create(dir: &Path, command: &str, raw: &RawConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(CONFIG_ECHO), raw.echo())?;
        Ok(Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            started: Instant::now(),
            files: vec![CONFIG_ECHO.to_string()],
            derived: Map::new(),
            chains: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    /// Registers `name` and returns its path inside the output directory.
    pub fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    pub fn writer(&mut self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.path(name))?))
    }

    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::Writer::from_writer(self.writer(name)?);
        w.write_record(header).map_err(csv_err)?;
        for row in rows {
            w.write_record(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn record(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.derived.insert(key.to_string(), v);
    }

    pub fn finish(mut self) -> Result<Vec<String>> {
        self.files.push(MANIFEST.to_string());
        let manifest = Manifest {
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            git_hash: env!("SUBMCMC_GIT_HASH"),
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            config: CONFIG_ECHO,
            files: &self.files,
            derived: &self.derived,
            chains: &self.chains,
        };
        let mut w = BufWriter::new(File::create(self.dir.join(MANIFEST))?);
        serde_json::to_writer_pretty(&mut w, &manifest)
            .map_err(|e| Error::Domain(format!("manifest: {e}")))?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(self.files)
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Domain(format!("csv: {other:?}")),
    }
}

/// Rust's shortest round-trip float formatting, empty for `None`.
pub fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
