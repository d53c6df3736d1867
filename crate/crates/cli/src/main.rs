use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wsod_core::{TimingRule, UpdateRule};

mod commands;
mod config;
mod error;
mod io;

use config::Config;

/// Pseudo-ground-truth mining, refinement, clustering, and VOC-style evaluation.
#[derive(Debug, Parser)]
#[command(name = "wsod", version)]
struct Cli {
    /// Flat `key = value` file supplying defaults for any long flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score detections against VOC ground truth (11-point AP per class, mAP).
    Evaluate(EvaluateArgs),
    /// Turn detections into pseudo ground truth: top-k per labelled class.
    MinePgt(MineArgs),
    /// Run the epoch loop with the simulated detector and a refinement policy.
    RefineLoop(RefineArgs),
    /// Greedy graph clustering of detections per image and class.
    Cluster(ClusterArgs),
    /// Check loss kernels against fixtures and finite differences.
    LossCheck(LossCheckArgs),
    /// Dump simulated detections, generating synthetic ground truth if none is given.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory of VOC XML annotations.
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    /// Detection file: `image_id class score xmin ymin xmax ymax` per line.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// IoU needed for a true positive [default: 0.5]
    #[arg(long)]
    iou: Option<f64>,
    /// Write the `class,ap` report here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-class precision/recall curves as CSV.
    #[arg(long)]
    pr_curves: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct MineArgs {
    /// Annotation directory; only the image-level classes and sizes are used.
    #[arg(long, conflicts_with = "labels")]
    gt_dir: Option<PathBuf>,
    /// Label file: `image_id class...` per line.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Boxes kept per labelled class [default: 1]
    #[arg(long)]
    k: Option<usize>,
    /// One pseudo-ground-truth XML per image is written here.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Seed of the simulated detector [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Corner jitter as a fraction of box size [default: 0]
    #[arg(long)]
    jitter: Option<f64>,
    /// Probability of missing an object [default: 0]
    #[arg(long)]
    miss_rate: Option<f64>,
    /// Mean spurious boxes per image [default: 0]
    #[arg(long)]
    fp_rate: Option<f64>,
    /// Score noise amplitude [default: 0]
    #[arg(long)]
    score_noise: Option<f64>,
    /// Per-epoch shrink of jitter and miss rate [default: 0]
    #[arg(long)]
    epoch_gain: Option<f64>,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    /// every | third | last3 | once23 [default: every]
    #[arg(long)]
    timing: Option<TimingRule>,
    /// all | best-half | worst-half [default: all]
    #[arg(long)]
    update: Option<UpdateRule>,
    /// [default: 1]
    #[arg(long)]
    k: Option<usize>,
    /// [default: 12]
    #[arg(long)]
    max_epochs: Option<u32>,
    /// IoU for scoring pseudo ground truth against ground truth [default: 0.5]
    #[arg(long)]
    iou: Option<f64>,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Receives `epochs.csv` and the final pseudo ground truth under `pgt/`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Proposals are linked when IoU exceeds this [default: 0.4]
    #[arg(long)]
    edge_threshold: Option<f64>,
    /// Minimum IoU to join a cluster rather than background [default: 0.5]
    #[arg(long)]
    assign_threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossCheckArgs {
    /// Fixture file; the built-in fixtures are used when absent.
    #[arg(long)]
    fixtures: Option<PathBuf>,
    /// Seed of the finite-difference sample points [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Use this ground truth instead of generating a synthetic dataset.
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    /// Synthetic images [default: 50]
    #[arg(long)]
    images: Option<usize>,
    /// Comma-separated synthetic class names [default: cat,dog,person,car,bird]
    #[arg(long)]
    classes: Option<String>,
    /// Most distinct classes per synthetic image [default: 2]
    #[arg(long)]
    max_classes: Option<usize>,
    /// Most instances per present class [default: 1]
    #[arg(long)]
    max_instances: Option<usize>,
    /// Detect at this epoch of the simulated detector [default: 1]
    #[arg(long)]
    epochs: Option<u32>,
    #[command(flatten)]
    oracle: OracleArgs,
    /// Receives `detections.txt`, `labels.txt`, and synthetic `gt/`.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    let jobs = cfg.pick_or(cli.jobs, "jobs", 1)?;
    if jobs == 0 {
        return Err(error::DataError::new("--jobs must be at least 1").into());
    }
    match cli.command {
        Command::Evaluate(a) => commands::evaluate(&a, &cfg, jobs),
        Command::MinePgt(a) => commands::mine(&a, &cfg, jobs),
        Command::RefineLoop(a) => commands::refine_loop(&a, &cfg),
        Command::Cluster(a) => commands::cluster(&a, &cfg),
        Command::LossCheck(a) => commands::loss_check(&a, &cfg),
        Command::Simulate(a) => commands::simulate(&a, &cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(error::exit_code(&e))
        }
    }
}
