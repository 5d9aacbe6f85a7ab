//! `emorec`: command-line driver for the speech emotion recognition
//! pipeline. One binary, one subcommand per pipeline stage.
//!
//! Exit codes: 0 on success, 1 on configuration/validation errors, 2 on
//! runtime or data errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emorec_core::CoreError;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(m) => CliError::Validation(format!("configuration error: {m}")),
            CoreError::Data(m) => CliError::Runtime(format!("data error: {m}")),
            CoreError::Io(e) => CliError::Runtime(format!("io error: {e}")),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

#[derive(Parser)]
#[command(
    name = "emorec",
    about = "Speech emotion recognition: corpus generation, feature preparation, training, and speaker-disjoint cross-validation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus (WAV files plus manifest).
    GenCorpus {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Utterances per class (largest class when --imbalanced).
        #[arg(long = "per-class")]
        per_class: usize,
        /// Skew class counts toward a neutral-heavy distribution.
        #[arg(long)]
        imbalanced: bool,
        /// Sample rate in Hz.
        #[arg(long = "sample-rate", default_value_t = 8000)]
        sample_rate: u32,
    },
    /// Compute and cache spectrograms plus per-fold statistics sidecars.
    Prepare {
        /// Manifest CSV.
        #[arg(long)]
        manifest: PathBuf,
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for EMSP caches and stats sidecars.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a single cross-validation fold.
    Train {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Fold number, 1-10.
        #[arg(long)]
        fold: u8,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run cross-validation over all (or selected) folds and aggregate.
    Cv {
        /// Run configuration (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated fold numbers (default: all ten).
        #[arg(long, value_delimiter = ',')]
        folds: Vec<u8>,
        /// Maximum folds trained concurrently.
        #[arg(long)]
        jobs: Option<usize>,
        /// Skip training: aggregate an existing per-fold results CSV.
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Verify the analytic backward pass against central finite differences.
    Gradcheck {
        /// Run configuration; its network section is checked at reduced
        /// scale. Without it, the built-in miniature network is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Finite-difference precision: "default" or "high".
        #[arg(long, default_value = "default")]
        precision: String,
    },
    /// Warp a cached spectrogram along the frequency axis.
    Augment {
        /// Input EMSP container.
        #[arg(long = "in")]
        input: PathBuf,
        /// Warp factor alpha.
        #[arg(long)]
        alpha: f64,
        /// Output EMSP container.
        #[arg(long)]
        out: PathBuf,
        /// Reject alpha outside [0.9, 1.1] instead of warning.
        #[arg(long)]
        strict: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenCorpus {
            out,
            seed,
            per_class,
            imbalanced,
            sample_rate,
        } => commands::gen_corpus(&out, seed, per_class, imbalanced, sample_rate),
        Command::Prepare {
            manifest,
            config,
            out,
        } => commands::prepare(&manifest, &config, &out),
        Command::Train { config, fold, out } => commands::train(&config, fold, &out),
        Command::Cv {
            config,
            out,
            folds,
            jobs,
            import,
        } => commands::cv(&config, &out, &folds, jobs, import.as_deref()),
        Command::Gradcheck { config, precision } => {
            commands::gradcheck(config.as_deref(), &precision)
        }
        Command::Augment {
            input,
            alpha,
            out,
            strict,
        } => commands::augment(&input, alpha, &out, strict),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
