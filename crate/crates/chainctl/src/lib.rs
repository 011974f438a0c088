//! Batch runner behind the `chainctl` binary: JSON experiment configs,
//! figure presets, CSV tables and a JSON manifest per run.

pub mod config;
pub mod experiments;

pub use config::{preset, ExperimentConfig, PRESETS};
pub use experiments::{run, RunOutput};

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable that overrides the master seed of any run.
pub const SEED_ENV: &str = "CHAINCTL_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure")]
    Numerical(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error("output error: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    /// 2 for configuration problems, 3 for numerical failures, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Output(_) => 1,
        }
    }
}

macro_rules! numerical {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Numerical(Box::new(e))
            }
        }
    )*};
}

numerical!(
    spinxfer::chain::ChainError,
    spinxfer::control::ControlError,
    spinxfer::bathspec::BathError,
    spinxfer::dynamics::DynamicsError,
    spinxfer::noise::NoiseError
);

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Output(e.into())
    }
}

/// Applies `CHAINCTL_SEED` if it is set.
pub fn apply_seed_override(config: &mut ExperimentConfig) -> Result<(), CliError> {
    if let Ok(v) = std::env::var(SEED_ENV) {
        config.master_seed = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub master_seed: u64,
    /// How per-realization seeds follow from each ensemble seed.
    pub rule: String,
    pub ensembles: Vec<experiments::SeedRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub library_version: String,
    pub experiment: String,
    /// Fully resolved config; rerunning it reproduces every table.
    pub config: ExperimentConfig,
    pub seeds: SeedInfo,
    pub outputs: Vec<String>,
    pub summary: serde_json::Value,
}

pub const SEED_RULE: &str = "realization r of an ensemble with seed s uses the first u64 of ChaCha8(seed_from_u64(s), stream r); \
     link l on interval n then draws the n-th f64 of ChaCha8(seed_from_u64(that), stream l)";

pub fn manifest(config: &ExperimentConfig, output: &RunOutput) -> Manifest {
    Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        library_version: spinxfer::VERSION.into(),
        experiment: config.experiment.name().into(),
        config: config.clone(),
        seeds: SeedInfo {
            master_seed: config.master_seed,
            rule: SEED_RULE.into(),
            ensembles: output.seeds.clone(),
        },
        outputs: output.files.iter().map(|f| f.name.clone()).collect(),
        summary: output.summary.clone(),
    }
}

/// Runs `config` and writes its tables plus `manifest.json` into `dir`
/// (the config's `output_dir` unless overridden). Returns the manifest path.
pub fn run_and_write(config: &ExperimentConfig, dir: Option<&Path>) -> Result<PathBuf, CliError> {
    let mut config = config.clone();
    if let Some(d) = dir {
        config.output_dir = d.to_path_buf();
    }
    let output = run(&config)?;
    write_run(&config, &output)
}

pub fn write_run(config: &ExperimentConfig, output: &RunOutput) -> Result<PathBuf, CliError> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    for f in &output.files {
        std::fs::write(dir.join(&f.name), &f.bytes)?;
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest(config, output)).map_err(std::io::Error::from)?;
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}
