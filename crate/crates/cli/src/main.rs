//! `rppg`: synthesis, pretraining and heart-rate evaluation from the command line.
//!
//! Exit status: 0 success, 2 configuration error, 3 data error, 4 divergence.

mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rppg_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "rppg", version, about = "Self-supervised remote heart-rate estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Flat key=value configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (created if missing).
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset in the on-disk layout.
    Synth(Common),
    /// Self-supervised pretraining on the training subjects.
    Pretrain(Common),
    /// Frozen encoder plus a trained linear heart-rate head.
    LinearEval(Common),
    /// Train encoder and head end to end from a checkpoint or from scratch.
    Finetune(Common),
    /// Metrics from a predictions CSV (`clip_id,pred_bpm,true_bpm`).
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Compare finished runs: text table and SVG chart.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directories containing metrics.json.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

/// Failure of one command, mapped to an exit status.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Core(e) => match e.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    let result = match cli.command {
        Command::Synth(c) => commands::synth(&c),
        Command::Pretrain(c) => commands::pretrain(&c),
        Command::LinearEval(c) => commands::linear_eval(&c),
        Command::Finetune(c) => commands::finetune(&c),
        Command::Evaluate { common, predictions } => commands::evaluate(&common, &predictions),
        Command::Report { common, runs } => commands::report(&common, &runs),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
