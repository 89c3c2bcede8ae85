//! The `protoscope` command line.
//!
//! | command    | reads                 | writes                                  |
//! |------------|-----------------------|-----------------------------------------|
//! | `gen-data` | nothing               | blob dataset CSV (optionally split)     |
//! | `train`    | dataset CSV           | model JSON, training history CSV        |
//! | `evaluate` | model JSON            | metric report JSON/CSV, prototype set   |
//! | `sweep`    | dataset CSV           | per-cell and per-fraction results CSV   |
//! | `report`   | sweep CSV             | `fraction,lower,accuracy,upper` series  |
//!
//! `evaluate` opens a dataset only when `--validate` names one. Every file
//! written gets a `<file>.manifest.json` next to it recording the command,
//! its full configuration and the model hash where there is one.
//!
//! Exit codes: 0 success, 2 configuration or parse error, 3 training abort,
//! 4 evaluation failure.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use clap::{Parser, Subcommand};
use protoscope::data::DataError;
use protoscope::metrics::MetricError;
use protoscope::network::ModelError;
use protoscope::proto::ProtoError;
use protoscope::trainer::TrainError;
use thiserror::Error;

pub mod args;
mod evaluate;
mod gen_data;
pub mod manifest;
mod report;
pub mod sweep;
mod train;

pub use args::{EvaluateArgs, GenDataArgs, ReportArgs, SweepArgs, TrainArgs};

#[derive(Debug, Parser)]
#[command(name = "protoscope", version, about = "Dataless evaluation of trained classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian-blob dataset.
    GenData(GenDataArgs),
    /// Train a classifier on a CSV dataset.
    Train(TrainArgs),
    /// Score a trained model from its own prototypes; reads no data.
    Evaluate(EvaluateArgs),
    /// Train and evaluate over a grid of training fractions and seeds.
    Sweep(SweepArgs),
    /// Turn a sweep table into per-fraction bound series.
    Report(ReportArgs),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Proto(#[from] ProtoError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed sweep table: {message}")]
    SweepFormat { path: String, message: String },
    #[error("no sweep cell succeeded")]
    EmptySweep,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(e) => e.exit_code() as u8,
            CliError::Train(TrainError::Diverged { .. }) => 3,
            CliError::Train(TrainError::Model(_)) => 3,
            CliError::Proto(ProtoError::Config(_)) => 2,
            CliError::Proto(_) | CliError::Metric(_) | CliError::EmptySweep => 4,
            _ => 2,
        }
    }
}

/// Parses `args` (program name first) and runs the selected command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match &cli.command {
        Command::GenData(a) => gen_data::run(a),
        Command::Train(a) => train::run(a),
        Command::Evaluate(a) => evaluate::run(a),
        Command::Sweep(a) => sweep::run(a),
        Command::Report(a) => report::run(a),
    }
}

pub(crate) fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| io_error(path, source))
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source,
    }
}
