//! `pdls`: synthetic data, quality control, training, calibration,
//! inference and evaluation for the specimen triage pipeline.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use context::Context;

#[derive(Parser, Debug)]
#[command(name = "pdls", version, about = "Dermatopathology specimen triage pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    /// Leave the timestamp comment out of CSV reports.
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (and optionally slides and a shifted lab).
    SynthGen(Common),
    /// Filter and embed slide images into a dataset.
    Qc {
        #[command(flatten)]
        common: Common,
        /// Apply saved preprocessing models instead of fitting new ones.
        #[arg(long)]
        reuse_preprocessing: bool,
    },
    /// Train the three hierarchy models.
    Train(Common),
    /// Fit confidence thresholds on the validation split.
    Calibrate(Common),
    /// Adapt a model to a new lab's calibration set.
    Finetune {
        #[command(flatten)]
        common: Common,
        /// Where to write the adapted model; default `finetuned.pdls` in the
        /// output directory.
        #[arg(long, value_name = "PATH")]
        model_out: Option<PathBuf>,
    },
    /// Predict specimens with a calibrated model.
    Infer {
        #[command(flatten)]
        common: Common,
        /// train, val, test, calibration or all.
        #[arg(long, default_value = "all")]
        split: String,
    },
    /// Predict the test split and write metrics and ROC reports.
    Evaluate(Common),
    /// Simulate worklist prioritisation from a predictions file.
    TriageSim {
        #[command(flatten)]
        common: Common,
        /// Number of simulated caseloads; overrides the config.
        #[arg(long)]
        sims: Option<usize>,
        /// Predictions CSV; default `predictions.csv` in the output directory.
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
    },
    /// Compare consensus-trained and non-consensus-trained models.
    Ablation(Common),
}

pub enum Failure {
    Usage(String),
    Data(String),
}

impl From<pdls_core::Error> for Failure {
    fn from(e: pdls_core::Error) -> Self {
        match e {
            pdls_core::Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::SynthGen(c) => commands::synth_gen(&Context::new(&c)?),
        Command::Qc {
            common,
            reuse_preprocessing,
        } => commands::qc(&Context::new(&common)?, reuse_preprocessing),
        Command::Train(c) => commands::train(&Context::new(&c)?),
        Command::Calibrate(c) => commands::calibrate(&Context::new(&c)?),
        Command::Finetune { common, model_out } => commands::finetune(&Context::new(&common)?, model_out),
        Command::Infer { common, split } => commands::infer(&Context::new(&common)?, &split),
        Command::Evaluate(c) => commands::evaluate(&Context::new(&c)?),
        Command::TriageSim {
            common,
            sims,
            predictions,
        } => commands::triage_sim(&Context::new(&common)?, sims, predictions),
        Command::Ablation(c) => commands::ablation(&Context::new(&c)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
