//! `tcb`: generate toy data, train transform codebooks, evaluate them and
//! compare rate-distortion curves.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data or file
//! format error, 4 numerical failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tcb_core::ErrorClass;

#[derive(Parser, Debug)]
#[command(name = "tcb", version, about = "Transform codebook design and evaluation")]
struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample the toy Gaussian mixture into training covariances and test vectors.
    GenToy(GenToyArgs),
    /// Design a codebook from a covariance set.
    Train(TrainArgs),
    /// Code data with a codebook and report rate points and codeword usage.
    Eval(EvalArgs),
    /// Bjøntegaard deltas between two rate-point curves.
    Bd(BdArgs),
    /// Build a covariance set from raw residual frames.
    Ingest(IngestArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum TrainMode {
    /// One covariance per mixture component, estimated from its draws.
    Components,
    /// One covariance per block of draws from a single component.
    Blocks,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct GenToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300_000)]
    pub train_n: usize,
    #[arg(long, default_value_t = 3_000_000)]
    pub test_n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = TrainMode::Components)]
    pub train_mode: TrainMode,
    /// Vectors per training block in `blocks` mode.
    #[arg(long, default_value_t = 1024)]
    pub block_len: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum ModelArg {
    Highrate,
    Laplace,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum InitArg {
    Split,
    Klt,
    Random,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub covs: PathBuf,
    /// Codebook size.
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Highrate)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    /// Dead-zone width (default: equal to the step).
    #[arg(long)]
    pub deadzone: Option<f64>,
    /// Target rate in bits per vector for the high-rate model.
    #[arg(long, default_value_t = 0.0)]
    pub rate: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Split)]
    pub init: InitArg,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    /// Inner solver iteration cap per cell and outer iteration.
    #[arg(long, default_value_t = 500)]
    pub inner_iters: usize,
    #[arg(long)]
    pub append_dct: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum DataArg {
    Vectors,
    Frames,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
pub enum SideInfoArg {
    Entropy,
    Fixed,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub codebook: PathBuf,
    #[arg(long, value_enum)]
    pub data: DataArg,
    /// Vector file or raw frame file.
    #[arg(long)]
    pub input: PathBuf,
    /// Frame width (frames input).
    #[arg(long)]
    pub width: Option<usize>,
    /// Frame height (frames input).
    #[arg(long)]
    pub height: Option<usize>,
    /// Vectors per block (vectors input).
    #[arg(long, default_value_t = 1024)]
    pub block_len: usize,
    /// Comma-separated increasing step sizes; dead zone equals the step.
    #[arg(long, value_delimiter = ',', conflicts_with = "target_rate")]
    pub delta_grid: Option<Vec<f64>>,
    /// Search for the step giving this rate in bits per sample.
    #[arg(long)]
    pub target_rate: Option<f64>,
    #[arg(long, value_enum, default_value_t = SideInfoArg::Entropy)]
    pub side_info: SideInfoArg,
    #[arg(long, default_value_t = 255.0)]
    pub peak: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct BdArgs {
    #[arg(long)]
    pub curve_a: PathBuf,
    #[arg(long)]
    pub curve_b: PathBuf,
    /// JSON output file; a manifest is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, serde::Serialize)]
pub struct IngestArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    /// Covariance-set JSON output; a manifest is written next to it.
    #[arg(long)]
    pub out: PathBuf,
}

fn init_logging() {
    let mut b = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"));
    if std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty()) {
        b.write_style(env_logger::WriteStyle::Never);
    }
    b.format_timestamp(None).init();
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::GenToy(a) => commands::gen_toy(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bd(a) => commands::bd(a),
        Command::Ingest(a) => commands::ingest(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.class()))
        }
    }
}
