use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "beblid", version, about = "Train, extract, match and evaluate boosted binary descriptors")]
struct Cli {
    /// Worker thread hint; BEBLID_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a descriptor model from a patch set and a pair list.
    Train(TrainArgs),
    /// Compute descriptors for keypoints on an image, or for whole patches.
    Describe(DescribeArgs),
    /// Brute-force nearest-neighbor matching between two descriptor files.
    Match(MatchArgs),
    /// Verification, matching or retrieval measures.
    Eval(EvalArgs),
    /// Time descriptor extraction on one image.
    Bench(BenchArgs),
    /// Generate a synthetic patch set and optionally a pair file.
    Synth(SynthArgs),
    /// Keep the first learners of a model.
    Truncate(TruncateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Binary,
    Real,
}

/// Where training patches come from.
#[derive(Args, Debug)]
struct PatchSource {
    /// Patch-set directory holding patches.pgm and ids.txt.
    #[arg(long, required_unless_present = "brown_info")]
    patches: Option<PathBuf>,
    /// Brown info file; requires --brown-mosaic.
    #[arg(long, requires = "brown_mosaic", conflicts_with = "patches")]
    brown_info: Option<PathBuf>,
    /// Brown mosaic PGM files in patch order.
    #[arg(long)]
    brown_mosaic: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    source: PatchSource,
    /// Labelled pair file; omit to sample pairs with --positives and --total.
    #[arg(long, conflicts_with = "positives")]
    pairs: Option<PathBuf>,
    /// Fraction of positive pairs in the sampled training set.
    #[arg(long, requires = "total")]
    positives: Option<f64>,
    /// Number of sampled training pairs.
    #[arg(long)]
    total: Option<usize>,
    #[arg(long, value_enum, default_value = "binary")]
    mode: ModeArg,
    /// Learning rate γ.
    #[arg(long, default_value_t = 0.0055)]
    gamma: f64,
    /// Upper bound on the number of learners.
    #[arg(long, default_value_t = 512)]
    max_learners: usize,
    /// Pixel pairs drawn per round.
    #[arg(long, default_value_t = 500)]
    candidates: usize,
    /// Box sides to search, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "3,5,7,9,11,13,15")]
    scales: Vec<u32>,
    /// Rescale each class to half the weight mass every round.
    #[arg(long)]
    balanced: bool,
    /// Draw the candidate pairs once instead of every round.
    #[arg(long)]
    fixed_candidates: bool,
    #[arg(long)]
    seed: u64,
    /// Support-region extent per unit of keypoint size.
    #[arg(long, default_value_t = 1.0)]
    scale_multiplier: f64,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// Training report with the per-round log.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Full training record as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DescribeArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input image (PGM); requires --keypoints.
    #[arg(long, requires = "keypoints", required_unless_present = "patches")]
    image: Option<PathBuf>,
    /// Keypoint file with `x y size angle` rows.
    #[arg(long)]
    keypoints: Option<PathBuf>,
    /// Describe every patch of a patch-set directory instead.
    #[arg(long, conflicts_with = "image")]
    patches: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MatchArgs {
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    train: PathBuf,
    /// Keep mutual nearest neighbors only.
    #[arg(long)]
    cross_check: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(subcommand)]
    task: EvalTask,
    /// Also write the report as CSV.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum EvalTask {
    /// Rank labelled pairs by descriptor distance.
    Verification {
        /// `[NAME=]DESCRIPTORS,PAIRS`, repeatable.
        #[arg(long = "set", required = true)]
        sets: Vec<String>,
    },
    /// Rank target descriptors for every reference with a correspondence.
    Matching {
        /// Lines of `variant reference target correspondences`, paths
        /// relative to this file.
        #[arg(long)]
        tasks: PathBuf,
    },
    /// Rank a pool against each query, relevant items sharing its id.
    Retrieval {
        /// `[NAME=]DESCRIPTORS,IDS`, repeatable.
        #[arg(long = "set", required = true)]
        sets: Vec<String>,
    },
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    keypoints: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u32).range(1..))]
    repetitions: u32,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output patch-set directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    structures: usize,
    #[arg(long, default_value_t = 2)]
    instances: usize,
    #[arg(long)]
    seed: u64,
    /// Gaussian pixel noise σ.
    #[arg(long, default_value_t = 8.0)]
    noise: f64,
    /// Maximum shift in pixels.
    #[arg(long, default_value_t = 1.0)]
    shift: f64,
    /// Maximum rotation in degrees.
    #[arg(long, default_value_t = 10.0)]
    rotation: f64,
    /// Maximum brightness offset in gray levels.
    #[arg(long, default_value_t = 20.0)]
    brightness: f64,
    /// Also sample a pair file.
    #[arg(long, requires_all = ["positives", "total"])]
    pairs: Option<PathBuf>,
    #[arg(long)]
    positives: Option<f64>,
    #[arg(long)]
    total: Option<usize>,
}

#[derive(Args, Debug)]
struct TruncateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Number of learners to keep.
    #[arg(long)]
    bits: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
