//! Batch front end: `bgwcoal <command> --config job.json [--output out.csv] [--seed N] [--threads K]`.
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration or I/O
//! error, 3 domain error, 4 numerical failure.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::config::{Command, Format, JobConfig};
use crate::output::{render_csv, render_json, Provenance};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Library(bgwcoal::Error),
    #[error("{failed} of {total} validation checks failed")]
    Validation { failed: usize, total: usize },
    #[error("output contains NaN ({0})")]
    NotANumber(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Library(e) if e.is_numerical() => 4,
            CliError::Library(_) => 3,
            CliError::NotANumber(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "bgwcoal", version, about = "Coalescence times in continuous-time branching processes")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// JSON job description.
    #[arg(long)]
    pub config: PathBuf,
    /// Output file; stdout when absent. A `.json` extension selects JSON.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for replicas (0 = all cores), overriding the config.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Parses arguments, runs the job and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("bgwcoal: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(path: &Path) -> Result<JobConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    JobConfig::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn execute(args: &Args) -> Result<(), CliError> {
    let mut config = load_config(&args.config)?;
    if let Some(c) = config.command {
        if c != args.command {
            return Err(CliError::Config(format!(
                "config is for `{}` but `{}` was requested",
                c.name(),
                args.command.name()
            )));
        }
    }
    config.command = Some(args.command);
    if args.seed.is_some() {
        config.seed = args.seed;
    }
    if args.threads.is_some() {
        config.threads = args.threads;
    }
    let seed = config.seed.unwrap_or(0);
    let stochastic = matches!(args.command, Command::Simulate | Command::Validate);
    if stochastic {
        config.seed = Some(seed);
    }
    let out_path = args
        .output
        .clone()
        .or_else(|| config.output.as_ref().and_then(|o| o.path.clone()));
    let format = config
        .output
        .as_ref()
        .and_then(|o| o.format)
        .or_else(|| {
            out_path
                .as_ref()
                .filter(|p| p.extension().is_some_and(|e| e == "json"))
                .map(|_| Format::Json)
        })
        .unwrap_or(Format::Csv);

    log::info!("running {} (seed {seed})", args.command.name());
    let job = commands::Job {
        measure: config.offspring_measure().map_err(CliError::Library)?,
        config: &config,
        seed,
        threads: config.threads.unwrap_or(0),
    };
    let outcome = commands::run(args.command, &job)?;
    if let Some(where_) = outcome.table.nan_location() {
        return Err(CliError::NotANumber(where_));
    }

    let echo = serde_json::to_value(&config).map_err(|e| CliError::Config(e.to_string()))?;
    let meta = Provenance {
        command: args.command.name(),
        version: VERSION,
        seed: stochastic.then_some(seed),
        config: &echo,
    };
    let text = match format {
        Format::Csv => render_csv(&outcome.table, &meta),
        Format::Json => render_json(&outcome.table, &meta),
    };
    match &out_path {
        Some(p) => std::fs::write(p, text)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display())))?,
        None => print!("{text}"),
    }

    if !outcome.passed {
        let failed = outcome
            .table
            .rows
            .iter()
            .filter(|r| matches!(r.last(), Some(output::Cell::Bool(false))))
            .count();
        return Err(CliError::Validation {
            failed,
            total: outcome.table.rows.len(),
        });
    }
    Ok(())
}
