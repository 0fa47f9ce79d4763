//! `flowtrack` command-line interface.
//!
//! Exit status: 0 on success, 1 for usage errors, 2 for unreadable or
//! malformed data.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "flowtrack", version, about = "Scene-flow driven 3D multi-object tracking on KITTI-layout data")]
struct Cli {
    /// TOML file supplying defaults for any flag (keys are the long flag names).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Worker threads for per-sequence processing.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Track objects and write KITTI result files.
    Track(TrackArgs),
    /// Write per-frame scene flow (labels or estimates) as binary files.
    FlowLabels(FlowArgs),
    /// Write the jittered hard variant of a dataset.
    Perturb(PerturbArgs),
    /// Score result files against ground truth.
    Evaluate(EvalArgs),
    /// Write augmented frame pairs.
    Augment(AugmentArgs),
    /// Write a seeded synthetic dataset in KITTI layout.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset root containing label_02/, calib/ and velodyne/ (or training/).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Sequences: comma-separated names, `val`, `train` or `all`.
    #[arg(long)]
    pub seqs: Option<String>,
    /// Object classes, comma-separated (e.g. car,pedestrian).
    #[arg(long)]
    pub class: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (file for `evaluate`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrackerArgs {
    /// oracle | noisy:SIGMA | softnn:geometric | softnn:guided | zero
    #[arg(long)]
    pub flow: Option<String>,
    /// Neighbors per point for soft nearest-neighbor flow.
    #[arg(long)]
    pub k: Option<usize>,
    /// geometric | guided
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub iou_gate: Option<f64>,
    #[arg(long)]
    pub min_hits: Option<u32>,
    #[arg(long)]
    pub max_misses: Option<u32>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tracker: TrackerArgs,
    /// Directory of KITTI label files used as detections instead of ground truth.
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Also report tentative trajectories.
    #[arg(long)]
    pub tentative: bool,
}

#[derive(Debug, Args)]
pub struct FlowArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub tracker: TrackerArgs,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// One draw per track for the whole sequence instead of one per frame.
    #[arg(long)]
    pub per_sequence: bool,
    /// Rotate in the positive direction only.
    #[arg(long)]
    pub one_sided: bool,
    #[arg(long, default_value_t = 0.5)]
    pub max_translation: f64,
    #[arg(long, default_value_t = 20.0)]
    pub max_rotation_deg: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory holding `<seq>.txt` result files (or a `data/` subdirectory).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Localization similarity: 3d | bev
    #[arg(long)]
    pub similarity: Option<String>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Database objects inserted per pair.
    #[arg(long, default_value_t = 5)]
    pub objects: usize,
    /// Use every n-th consecutive pair.
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    /// Faster traffic.
    #[arg(long)]
    pub fast: bool,
}

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<flowtrack::Error> for Failure {
    fn from(e: flowtrack::Error) -> Self {
        match e {
            flowtrack::Error::InvalidArgument(m) => Failure::Usage(m),
            other => Failure::Data(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.into())
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(Failure::Usage)?,
        None => FileConfig::default(),
    };
    let threads = cli.threads.or(file.threads);
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        // a second initialization only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    match cli.command {
        Command::Track(a) => commands::track(a, &file),
        Command::FlowLabels(a) => commands::flow_labels(a, &file),
        Command::Perturb(a) => commands::perturb(a, &file),
        Command::Evaluate(a) => commands::evaluate(a, &file),
        Command::Augment(a) => commands::augment(a, &file),
        Command::Synth(a) => commands::synth(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
