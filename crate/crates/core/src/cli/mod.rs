//! Command-line front end. `main` only parses arguments and calls [`run`].

mod commands;
pub mod config;
pub mod heatmap;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{DataConfig, DatasetHash, RunConfig, TaskName};
pub use manifest::{RunManifest, Timing};

use crate::error::{Error, Result};
use crate::integration::Strategy;

#[derive(Debug, Parser)]
#[command(name = "posco", version, about = "POS-enhanced iterative co-attention reader")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write JSON and TSV reports.
    Eval(EvalArgs),
    /// Write JSON-lines predictions for every example.
    Predict(PredictArgs),
    /// Tag a plain-text file, one text per line, into a pre-tagged token file.
    Tag(TagArgs),
    /// Print the parameter breakdown of the resolved model.
    Params(ParamsArgs),
    /// Export the co-attention trace of one example plus a text heatmap.
    Trace(TraceArgs),
    /// Run an ablation grid and write mean-per-cell tables.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn enabled(self) -> bool {
        self == Switch::On
    }
}

/// Flags every subcommand accepts.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON config (or a run manifest); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model initialization and data-order seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Co-attention turns T.
    #[arg(long)]
    pub turns: Option<usize>,
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<Strategy>,
    #[arg(long, value_enum)]
    pub pos_embedding: Option<Switch>,
    /// Fraction of tags replaced at evaluation time.
    #[arg(long)]
    pub corrupt_rate: Option<f64>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, value_enum)]
    pub task: Option<TaskName>,
    /// Dataset file for file-backed tasks.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Synthetic generator seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// Synthetic extractive: tags are the only answer cue.
    #[arg(long, value_enum)]
    pub pos_dependency: Option<Switch>,
    /// Synthetic choice: scattered facts per example.
    #[arg(long)]
    pub facts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Dev file for file-backed tasks.
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub dev_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Answerability threshold; fitted on the evaluated set when absent.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub dev_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Answerability threshold; fitted on the input set when absent.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub dev_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TagArgs {
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Vocabulary size to account for.
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Checkpoint to trace; a freshly initialized model when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Example index in the evaluated split.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Option index for choice tasks.
    #[arg(long, default_value_t = 0)]
    pub option: usize,
    #[arg(long)]
    pub dev_size: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// POS embedding on and off.
    Pos,
    /// Turn counts 0 to 4 under every strategy.
    Turns,
    /// Tag corruption rates with POS embedding on.
    Corruption,
    /// Every axis.
    Full,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "full")]
    pub preset: Preset,
    /// Overrides the preset's POS axis, e.g. `on,off`.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub pos_axis: Option<Vec<Switch>>,
    #[arg(long, value_delimiter = ',')]
    pub turns_axis: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
    pub strategy_axis: Option<Vec<Strategy>>,
    #[arg(long, value_delimiter = ',')]
    pub corruption_axis: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "13,42,71")]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub dev_size: Option<usize>,
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Process exit code for an error: 2 for usage problems, 1 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        _ => 1,
    }
}

/// One-line, machine-parsable error description.
pub fn error_line(kind: &str, message: &str) -> String {
    format!(
        "error kind={kind} message={}",
        serde_json::to_string(message).unwrap_or_else(|_| "\"\"".into())
    )
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Tag(a) => commands::tag(a),
        Command::Params(a) => commands::params(a),
        Command::Trace(a) => commands::trace(a),
        Command::Sweep(a) => commands::sweep(a),
    }
}

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn main_with(args: impl IntoIterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let kind = if exit_code(&e) == 2 { "usage" } else { e.kind() };
            eprintln!("{}", error_line(kind, &e.to_string()));
            exit_code(&e)
        }
    }
}
