//! `maskinfer`: generate models, obfuscate them, run masked inference and measure the protocol.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maskinfer_core::Precision;

#[derive(Parser)]
#[command(
    name = "maskinfer",
    version,
    about = "Masked inference across a simulated enclave boundary"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Common {
    /// Master seed for models, masks and trials.
    #[arg(long, global = true, env = "MASKINFER_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Numeric precision, f32 or f64. Defaults to the stored precision of input files, else f64.
    #[arg(long, global = true)]
    pub precision: Option<Precision>,
    /// Print the report as JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    /// Also write the JSON report to this file.
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Clone, Debug)]
pub struct ArchArg {
    /// Architecture template: mlp, cnn or transformer.
    #[arg(long, default_value = "mlp")]
    pub arch: String,
    /// JSON architecture description, instead of a template.
    #[arg(long, value_name = "PATH", conflicts_with = "arch")]
    pub arch_file: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build a model with random weights and save it.
    Gen {
        #[command(flatten)]
        arch: ArchArg,
        /// Model file to write.
        model: PathBuf,
        /// Also write a random input for the model.
        #[arg(long, value_name = "PATH")]
        input: Option<PathBuf>,
    },
    /// Obfuscate a model into the bundle the untrusted runtime receives.
    Obfuscate {
        model: PathBuf,
        bundle: PathBuf,
        /// Write the enclave state needed by `infer`. Not part of the protocol.
        #[arg(long, value_name = "PATH")]
        export_secrets: Option<PathBuf>,
        /// Allow causal attention by shipping the permuted causal mask.
        #[arg(long)]
        insecure_causal: bool,
    },
    /// Run one masked inference and print the labels with crossing and operation counts.
    Infer {
        bundle: PathBuf,
        input: PathBuf,
        /// Enclave state written by `obfuscate --export-secrets`; updated in place.
        #[arg(long, value_name = "PATH")]
        secrets: PathBuf,
    },
    /// Compare masked and plaintext inference over random trials.
    Verify {
        #[command(flatten)]
        arch: ArchArg,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Largest accepted deviation. Defaults to 1e-8 at f64 and 1e-3 at f32.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Deviation after every layer, with and without a final normalization.
    Profile {
        #[command(flatten)]
        arch: ArchArg,
        /// Sublayer and head gain of the transformer template.
        #[arg(long)]
        gain: Option<f64>,
        /// Epsilon of the appended final normalization.
        #[arg(long, default_value_t = 1e-5)]
        eps: f64,
    },
    /// Distribution of original against obfuscated weights.
    Stats {
        #[command(flatten)]
        arch: ArchArg,
    },
    /// Correlation probes over repeated inferences of one input.
    Probe {
        #[arg(long, default_value_t = 100)]
        rounds: usize,
    },
    /// Per-layer operation counts and bundle sizes.
    Report {
        #[command(flatten)]
        arch: ArchArg,
        /// Also measure bundle growth over this many activation repeats (mlp only).
        #[arg(long, value_name = "STEPS")]
        growth: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli.command, &cli.common) {
        Ok(outcome) => match commands::emit(&outcome, &cli.common) {
            Ok(()) if outcome.passed => ExitCode::SUCCESS,
            Ok(()) => ExitCode::FAILURE,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
