use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use panogan::dataio::InputFormat;

mod commands;

/// Cross-view panorama synthesis from aerial images.
#[derive(Debug, Parser)]
#[command(name = "panogan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; they override values from `--config`.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feedback loops: `k` for training, `j` for inference.
    #[arg(long)]
    pub loops: Option<usize>,
    #[arg(long, value_enum)]
    pub input_format: Option<FormatArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum FormatArg {
    Polar,
    Duplicate,
    DuplicateRotate,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Polar => InputFormat::Polar,
            FormatArg::Duplicate => InputFormat::Duplicate,
            FormatArg::DuplicateRotate => InputFormat::DuplicateRotate,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OracleArg {
    /// Seeded random projection of pooled pixels; `--seed` picks the projection.
    Synthetic,
    /// Uniform prediction for every image.
    Uniform,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write preprocessed inputs and resized targets plus a manifest.
    Preprocess {
        #[command(flatten)]
        common: Common,
        /// Dataset root; defaults to the config's `data_root`, then `$PANOGAN_CACHE`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Train on the `train` split and write checkpoints and a loss log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also save a checkpoint every this many steps.
        #[arg(long)]
        checkpoint_every: Option<u64>,
        /// Continue from the latest checkpoint in `<out>/checkpoints`.
        #[arg(long)]
        resume: bool,
    },
    /// Generate panoramas and segmentation maps for a directory of aerial images.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory of aerial images, or a split directory containing `aerial/`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Score generated images against references with the same file names.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fake: PathBuf,
        #[arg(long)]
        real: PathBuf,
        #[arg(long, value_enum, default_value = "synthetic")]
        oracle: OracleArg,
        #[arg(long, default_value_t = 10)]
        classes: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Preprocess { common, data, split } => commands::preprocess(&common, data, split),
        Command::Train {
            common,
            data,
            checkpoint_every,
            resume,
        } => commands::train(&common, data, checkpoint_every, resume),
        Command::Infer {
            common,
            checkpoint,
            input,
        } => commands::infer(&common, &checkpoint, &input),
        Command::Evaluate {
            common,
            fake,
            real,
            oracle,
            classes,
        } => commands::evaluate(&common, &fake, &real, oracle, classes),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
