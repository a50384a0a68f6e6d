//! Experiment runner behind the `fracmono` binary.

pub mod config;
pub mod experiments;
pub mod matrix_io;
pub mod report;

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub use config::{ConfigError, ExperimentConfig, Kind};
pub use experiments::{ExperimentError, Outcome};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error("cannot write report: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write matrix: {0}")]
    Matrix(#[from] matrix_io::MatrixFileError),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Experiment(ExperimentError::Config(e))
    }
}

impl RunError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Experiment(ExperimentError::Config(_)) => 2,
            _ => 1,
        }
    }

    /// Machine-readable error record written to `error.json`.
    pub fn record(&self) -> Value {
        let (category, name) = match self {
            RunError::Experiment(ExperimentError::Config(e)) => ("config", variant_name(e)),
            RunError::Experiment(ExperimentError::Compute(e)) => ("computation", variant_name(e)),
            RunError::Io(_) | RunError::Matrix(_) => ("io", variant_name(self)),
        };
        json!({
            "status": "error",
            "category": category,
            "error": name,
            "message": self.to_string(),
        })
    }
}

/// `Foo` out of the `Debug` rendering `Foo { .. }` / `Foo(..)`.
fn variant_name(e: &impl std::fmt::Debug) -> String {
    let text = format!("{e:?}");
    text.split(|c: char| !c.is_alphanumeric() && c != '_')
        .next()
        .unwrap_or_default()
        .to_string()
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub kind: Kind,
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

/// Loads, validates and runs one experiment, writing `summary.json` plus the
/// tables and matrices into `out`. Returns the summary.
pub fn run(opts: &RunOptions) -> Result<Value, RunError> {
    let cfg = ExperimentConfig::load(&opts.config)?.resolve(opts.kind, opts.seed)?;
    run_config(&cfg, &opts.out)
}

pub fn run_config(cfg: &ExperimentConfig, out: &Path) -> Result<Value, RunError> {
    let kind = cfg.kind.expect("resolved config has a kind");
    let outcome = experiments::run_kind(cfg)?;
    std::fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for (name, table) in &outcome.tables {
        table.write(&out.join(name))?;
        files.push(*name);
    }
    if cfg.output.dump_matrices {
        for (name, m) in &outcome.matrices {
            matrix_io::write_matrix(&out.join(name), m)?;
            files.push(*name);
        }
    }
    let summary = json!({
        "status": "ok",
        "kind": kind.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "results": outcome.results,
        "files": files,
    });
    report::write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Writes `error.json` into `out`, best effort.
pub fn write_error(out: &Path, err: &RunError) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    report::write_json(&out.join("error.json"), &err.record())
}
