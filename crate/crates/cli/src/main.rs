use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use softmoe_cli::commands::{cmd_bench, cmd_experiment, cmd_train, ExperimentKind};

/// Soft mixture-of-experts: training, expert-subset experiments, and the
/// inference latency bench.
#[derive(Parser)]
#[command(name = "softmoe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model from a config file and write a checkpoint
    Train {
        /// Key=value run configuration
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path (default: model.smoe under $SOFTMOE_OUT_DIR or .)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed for init, data, and shuffling
        #[arg(long)]
        seed: Option<u64>,
        /// Directory with the four MNIST IDX files
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
    },
    /// Run a named experiment and emit a results table
    Experiment {
        name: ExperimentName,
        #[arg(long)]
        config: PathBuf,
        /// Results path; a .json extension selects JSON output
        #[arg(long)]
        out: Option<PathBuf>,
        /// Rebase the config's seed list to start here
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mnist_dir: Option<PathBuf>,
    },
    /// Time forward passes under top-k expert selection
    Bench {
        /// Optional geometry overrides (defaults: 6 layers, n=8, width 2048)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExperimentName {
    Norm,
    Specialization,
    AccuracyVsN,
    Latency,
}

impl From<ExperimentName> for ExperimentKind {
    fn from(name: ExperimentName) -> ExperimentKind {
        match name {
            ExperimentName::Norm => ExperimentKind::Norm,
            ExperimentName::Specialization => ExperimentKind::Specialization,
            ExperimentName::AccuracyVsN => ExperimentKind::AccuracyVsN,
            ExperimentName::Latency => ExperimentKind::Latency,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            out,
            seed,
            mnist_dir,
        } => cmd_train(&config, out, seed, mnist_dir.as_deref()),
        Command::Experiment {
            name,
            config,
            out,
            seed,
            mnist_dir,
        } => cmd_experiment(name.into(), &config, out, seed, mnist_dir.as_deref()),
        Command::Bench { config, out, seed } => cmd_bench(config.as_deref(), out, seed),
    };
    match result {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("softmoe: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
