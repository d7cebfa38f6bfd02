//! `tdcbf`: simulate mixtures, separate them with the streaming engine,
//! score the estimates, and run the preset benchmark.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "tdcbf", version, about = "Low-delay two-channel dereverberation and separation")]
pub struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override the configured random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print (or write) a configuration file with every default spelled out.
    ReferenceConfig {
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Render a reverberant two-source mixture and its reference images.
    Simulate(SimulateArgs),
    /// Run the streaming engine over a two-channel WAV.
    Separate(SeparateArgs),
    /// Score separated sources against reference images.
    Evaluate(EvaluateArgs),
    /// Compare the presets over simulated trials.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Source angles in degrees, e.g. `30,90`.
    #[arg(long, value_delimiter = ',')]
    pub angles: Option<Vec<f64>>,
    /// Seconds of audio.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Trial index selecting the source signals.
    #[arg(long, default_value_t = 0)]
    pub trial: u64,
    /// Use seeded synthetic sources instead of a speech corpus.
    #[arg(long)]
    pub synthetic_sources: bool,
    /// Also write each source-to-mic RIR as `rir_s<source>_m<mic>.wav`.
    #[arg(long)]
    pub export_rirs: bool,
    /// Re-render the mixture described by an earlier manifest.
    #[arg(long, conflicts_with_all = ["angles", "duration", "synthetic_sources"])]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Replace the configured engine with a named preset.
    #[arg(long)]
    pub preset: Option<String>,
    /// Samples per push into the engine.
    #[arg(long)]
    pub chunk_size: Option<usize>,
    /// Keep the initial filters for the whole stream.
    #[arg(long)]
    pub no_adapt: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimate WAVs; channels are taken in file order.
    #[arg(long, num_args = 1.., required = true)]
    pub estimates: Vec<PathBuf>,
    /// Reference WAVs; channels are taken in file order.
    #[arg(long, num_args = 1.., required = true)]
    pub references: Vec<PathBuf>,
    /// Unprocessed mixture; enables improvement columns.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    /// Leading seconds excluded from the summary.
    #[arg(long)]
    pub discard_seconds: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Seconds of audio per trial.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Comma-separated preset names.
    #[arg(long, value_delimiter = ',')]
    pub presets: Option<Vec<String>>,
    #[arg(long)]
    pub chunk_size: Option<usize>,
    #[arg(long)]
    pub discard_seconds: Option<f64>,
    /// Quick run: 2 trials of 4 s with a 2 s discard unless overridden.
    #[arg(long)]
    pub smoke: bool,
    #[arg(long)]
    pub synthetic_sources: bool,
    /// Run trials one after another.
    #[arg(long)]
    pub sequential: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tdcbf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
