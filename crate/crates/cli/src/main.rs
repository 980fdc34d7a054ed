mod commands;
mod config;
mod dataset;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "irgs", version, about = "Segmentation guided by reconstruction quality")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone, Default)]
pub struct Common {
    /// `key = value` config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dataset directory
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Output path
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Predictor {
    /// Segment with a trained checkpoint
    Model,
    /// Pass the ground-truth labels through
    Truth,
    /// Label every pixel 1
    Constant,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic dataset
    Gen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 64)]
        count: usize,
        /// Image side length in pixels
        #[arg(long, default_value_t = 32)]
        size: usize,
    },
    /// Train a reconstructor and write a checkpoint
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Decompose images with a trained checkpoint
    Segment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// A single image instead of a dataset directory
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Score segmentations of a labeled dataset
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Predictor::Model)]
        predictor: Predictor,
    },
}

fn init_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("IRGS_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("IRGS_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Usage("IRGS_THREADS must be at least 1".into()));
        }
        // a second initialization only happens in tests; ignore it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Gen { common, count, size } => commands::gen(&common, count, size),
        Command::Train { common, epochs } => commands::train(&common, epochs),
        Command::Segment {
            common,
            checkpoint,
            image,
        } => commands::segment(&common, checkpoint, image),
        Command::Eval {
            common,
            checkpoint,
            predictor,
        } => commands::eval(&common, checkpoint, predictor),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("irgs: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
