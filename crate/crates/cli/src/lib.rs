//! Scenario-driven front end for `sgnet-core`.
//!
//! A scenario file names a gain operator, an optional network and a list of
//! analyses. [`run_file`] executes them (condition checks, closures, paths,
//! then simulations) and writes `report.json` plus one CSV per table into
//! the output directory. The exit code of a run is nonzero iff some step was
//! falsified or refused.

pub mod commands;
pub mod config;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{load_scenario, parse_scenario, Scenario};
pub use report::{merge_reports, Report, Step, StepStatus, Table};
pub use run::{execute, RunOutput};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("step `{id}` disagrees between reports: {first} vs {second}")]
    MergeConflict { id: String, first: String, second: String },
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { key: key.into(), message: message.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }
}

/// Writes `report.json` and the tables into `dir`, creating it if needed.
pub fn write_outputs(dir: &Path, out: &RunOutput) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for table in &out.tables {
        let path = dir.join(format!("{}.csv", table.name));
        let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        table.write_csv(std::io::BufWriter::new(file))?;
    }
    let path = dir.join("report.json");
    std::fs::write(&path, out.report.to_json()?).map_err(|e| CliError::io(&path, e))
}

/// Output directory: the override, else the scenario's `output_dir` relative
/// to the scenario file, else `sgnet-out/<name>` next to it.
pub fn output_dir(config_path: &Path, scenario: &Scenario, override_dir: Option<&Path>) -> PathBuf {
    if let Some(dir) = override_dir {
        return dir.to_path_buf();
    }
    let base = config_path.parent().unwrap_or(Path::new("."));
    match &scenario.output_dir {
        Some(dir) if dir.is_absolute() => dir.clone(),
        Some(dir) => base.join(dir),
        None => base.join("sgnet-out").join(&scenario.name),
    }
}

/// Loads, executes and writes a scenario; returns the report.
pub fn run_file(config_path: &Path, override_dir: Option<&Path>) -> Result<Report, CliError> {
    let scenario = load_scenario(config_path)?;
    let out = execute(&scenario)?;
    write_outputs(&output_dir(config_path, &scenario, override_dir), &out)?;
    Ok(out.report)
}
