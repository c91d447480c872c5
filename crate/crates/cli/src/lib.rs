//! Command-line pipeline: chunk, preprocess, split, train, balance,
//! evaluate and report, with JSON manifests for every run.

pub mod commands;
pub mod config;

use std::ffi::OsString;

use clap::{Parser, Subcommand};
use serde_json::json;

pub use config::PipelineConfig;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numeric(_) => EXIT_NUMERIC,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Data(_) => "data",
            CliError::Numeric(_) => "numeric",
        }
    }

    /// Single-line JSON rendering for stderr.
    pub fn to_json_line(&self) -> String {
        json!({ "error": self.kind(), "code": self.code(), "message": self.to_string() }).to_string()
    }
}

#[derive(Debug, Parser)]
#[command(name = "flowgan", version, about = "GAN oversampling pipeline for imbalanced netflow data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, clap::Args)]
struct Overrides {
    /// `--config FILE` and `--key value` settings (see README for keys)
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "SETTINGS")]
    settings: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a large CSV into fixed-size chunk files
    Chunk(Overrides),
    /// Parse, label and encode flow records
    Preprocess(Overrides),
    /// Stratified train/test split and normalization
    Split(Overrides),
    /// Train the MLP classifier
    TrainClf(Overrides),
    /// Train the GAN on training-set attack rows
    TrainGan(Overrides),
    /// Sample synthetic attack rows from a trained GAN
    Generate(Overrides),
    /// Append synthetic attack rows until classes are equal
    Balance(Overrides),
    /// Score the test set and export metrics and curves
    Evaluate(Overrides),
    /// Compare unbalanced and balanced evaluations
    Report(Overrides),
    /// Write a synthetic dataset and its split
    Synth(Overrides),
}

impl Command {
    fn parts(&self) -> (&'static str, &[String]) {
        match self {
            Command::Chunk(o) => ("chunk", &o.settings),
            Command::Preprocess(o) => ("preprocess", &o.settings),
            Command::Split(o) => ("split", &o.settings),
            Command::TrainClf(o) => ("train-clf", &o.settings),
            Command::TrainGan(o) => ("train-gan", &o.settings),
            Command::Generate(o) => ("generate", &o.settings),
            Command::Balance(o) => ("balance", &o.settings),
            Command::Evaluate(o) => ("evaluate", &o.settings),
            Command::Report(o) => ("report", &o.settings),
            Command::Synth(o) => ("synth", &o.settings),
        }
    }
}

/// Runs one subcommand. `argv[0]` is the program name. Returns the process
/// exit status; errors are reported on stderr as one JSON line.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Usage(first.to_string()).to_json_line());
            return EXIT_USAGE;
        }
    };
    let (name, settings) = cli.command.parts();
    match config::load(settings).and_then(|cfg| commands::run(name, &cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            e.code()
        }
    }
}
