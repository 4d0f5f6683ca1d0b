//! `seisnet` command line: generate synthetic data, train the detector,
//! scan traces, evaluate detections, inspect weights, and run the
//! gradient-check suite.
//!
//! Exit codes: 0 success, 1 input/validation error, 2 runtime failure.
//! Output files are written atomically (temp file + rename). Flags
//! override config-file values, which override built-in defaults; the
//! effective configuration is echoed to stderr at startup.

mod commands;
mod output;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Parser)]
#[command(
    name = "seisnet",
    version,
    about = "Densely connected 1D CNN detector for events in continuous seismic traces"
)]
struct Cli {
    /// Seed override threaded to every subcommand's randomness.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker thread cap for scanning and training
    /// (falls back to the SEISNET_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic trace corpus with event labels.
    Generate {
        /// Synthesis config (TOML); omit for the canonical day preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for traces, labels.csv, confounders.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the detector on labeled traces.
    Train {
        /// Training config (TOML); omit for defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Architecture spec (TOML); omit for the canonical network.
        #[arg(long)]
        arch: Option<PathBuf>,
        /// Directory of binary traces (*.snt).
        #[arg(long)]
        data: PathBuf,
        /// Event label CSV (trace_id,start_index,end_index).
        #[arg(long)]
        labels: PathBuf,
        /// Hand-picked negative intervals CSV (same schema as labels).
        #[arg(long)]
        picked: Option<PathBuf>,
        /// Number of random negative windows to draw.
        #[arg(long, default_value_t = 330)]
        random_negatives: usize,
        /// Resume from a checkpoint instead of a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Output directory (model.snw, history.csv, checkpoints).
        #[arg(long)]
        out: PathBuf,
        /// Override the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the config's learning rate.
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Slide the detector across a trace and report detections.
    Detect {
        #[arg(long)]
        weights: PathBuf,
        /// Trace file (.snt binary or .csv).
        #[arg(long)]
        trace: PathBuf,
        /// Optional ground-truth label CSV; enables the metrics report.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Window offset in samples.
        #[arg(long, default_value_t = 6000)]
        offset: usize,
        /// Detection threshold on the raw score (sign rule when 0).
        #[arg(long, default_value_t = 0.0)]
        threshold: f32,
        /// Skip the (large) plot-ready CSV.
        #[arg(long)]
        no_plot: bool,
        /// Output directory (detections.csv, metrics.csv, plot.csv).
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a detection listing against ground truth labels.
    Evaluate {
        /// Detection CSV (trace_id,start_index,end_index,score).
        #[arg(long)]
        detections: PathBuf,
        /// Ground-truth label CSV.
        #[arg(long)]
        labels: PathBuf,
        /// Window length; derived from the detections when omitted.
        #[arg(long)]
        window_len: Option<usize>,
        /// Metrics CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a weight file's architecture, parameter count, and shape ladder.
    Inspect {
        #[arg(long)]
        weights: PathBuf,
    },
    /// Run the finite-difference gradient-check suite.
    Gradcheck {
        /// Randomized trials per layer type.
        #[arg(long, default_value_t = 20)]
        trials: usize,
        /// Per-layer relative-error tolerance.
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Failures carry the exit code they map to.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing/unparseable inputs, mismatched artifacts: exit 1.
    Validation(String),
    /// Failures after inputs validated (I/O, computation): exit 2.
    Runtime(String),
}

impl CliError {
    fn validation(e: impl std::fmt::Display) -> Self {
        CliError::Validation(e.to_string())
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn init_threads(flag: Option<usize>) {
    let threads = flag.or_else(|| {
        std::env::var("SEISNET_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are successes, not flag errors.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprintln!("{e}");
            return ExitCode::from(1);
        }
    };
    init_threads(cli.threads);

    let result = match cli.command {
        Command::Generate { config, out } => commands::generate(config, out, cli.seed),
        Command::Train {
            config,
            arch,
            data,
            labels,
            picked,
            random_negatives,
            resume,
            out,
            epochs,
            lr,
        } => commands::train(commands::TrainArgs {
            config,
            arch,
            data,
            labels,
            picked,
            random_negatives,
            resume,
            out,
            epochs,
            lr,
            seed: cli.seed,
        }),
        Command::Detect {
            weights,
            trace,
            labels,
            offset,
            threshold,
            no_plot,
            out,
        } => commands::detect(weights, trace, labels, offset, threshold, no_plot, out),
        Command::Evaluate {
            detections,
            labels,
            window_len,
            out,
        } => commands::evaluate(detections, labels, window_len, out),
        Command::Inspect { weights } => commands::inspect(weights),
        Command::Gradcheck { trials, tolerance } => {
            commands::gradcheck(trials, tolerance, cli.seed.unwrap_or(0))
        }
    };

    match result {
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
