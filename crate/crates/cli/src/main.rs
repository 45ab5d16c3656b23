use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deconv_ht::commands::{self, Options};
use deconv_ht::config::OutputFormat;

#[derive(Parser)]
#[command(
    name = "deconv-ht",
    version,
    about = "Mixture deconvolution of response probabilities and bias-corrected totals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the simulation grid of [simulate] and write its summary table.
    Simulate(Common),
    /// Estimate group proportions from observation records.
    Estimate(Common),
    /// Bootstrap the MSE term of each group's estimated total.
    Bootstrap(Common),
    /// Write the kernel matrix of [kernel].
    Kernel(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Observation records (CSV).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file; defaults to [output] path, then stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured repetition count.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<OutputFormat>,
}

impl From<Common> for Options {
    fn from(c: Common) -> Self {
        Options {
            config: c.config,
            data: c.data,
            out: c.out,
            seed: c.seed,
            reps: c.reps,
            format: c.format,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => commands::simulate(&c.into()).map(drop),
        Command::Estimate(c) => commands::estimate(&c.into()).map(drop),
        Command::Bootstrap(c) => commands::bootstrap(&c.into()).map(drop),
        Command::Kernel(c) => commands::kernel(&c.into()).map(drop),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
