use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use log::{info, warn};
use wsod_core::clustering::{Cluster, ScoredProposal, DEFAULT_ASSIGN_THRESHOLD, DEFAULT_EDGE_THRESHOLD};
use wsod_core::evaluation::{pr_curves_csv, report_csv};
use wsod_core::loss_check::{parse_fixtures, LossCheckReport};
use wsod_core::mining::{mine_dataset_with_jobs, MiningWarning};
use wsod_core::refinement::epoch_series_csv;
use wsod_core::scalar::fmt6;
use wsod_core::sim_detector::synthetic_dataset;
use wsod_core::voc_io::{image_level_labels, parse_detections, parse_labels, write_detections, write_labels};
use wsod_core::{
    assign_clusters, build_graph, evaluate_with_jobs, run_refinement_loop, select_centers,
    Detection, DetectorOracle, ImageLevelLabels, MiningConfig, OracleConfig, Outcome, RefinementPolicy,
    SyntheticDatasetConfig, TimingRule, UpdateRule,
};

use crate::config::Config;
use crate::error::{DataError, EXIT_DATA};
use crate::io::{emit, load_gt_dir, read_text, write_annotations, write_file};
use crate::{ClusterArgs, EvaluateArgs, LossCheckArgs, MineArgs, OracleArgs, RefineArgs, SimulateArgs};

const BUILTIN_LOSS_FIXTURES: &str = include_str!("../fixtures/loss_cases.txt");

fn load_detections(path: &Path) -> Result<Vec<Detection<f64>>> {
    parse_detections(&read_text(path)?).with_context(|| path.display().to_string())
}

pub fn evaluate(a: &EvaluateArgs, cfg: &Config, jobs: usize) -> Result<ExitCode> {
    let gt_dir: PathBuf = cfg.require(a.gt_dir.clone(), "gt_dir")?;
    let det_path: PathBuf = cfg.require(a.detections.clone(), "detections")?;
    let iou = cfg.pick_or(a.iou, "iou", 0.5)?;
    let out: Option<PathBuf> = cfg.pick(a.out.clone(), "out")?;
    let pr_path: Option<PathBuf> = cfg.pick(a.pr_curves.clone(), "pr_curves")?;

    let gt = load_gt_dir(&gt_dir)?;
    let dets = load_detections(&det_path)?;
    let report = evaluate_with_jobs(&dets, &gt, iou, jobs)?;

    for (name, c) in &report.classes {
        let tp = c
            .curve
            .points
            .iter()
            .filter(|p| p.outcome == Outcome::TruePositive)
            .count();
        let fp = c.curve.points.len() - tp;
        let total = c.curve.total_positives;
        info!(
            "{name}: TP={tp} FP={fp} FN={} precision={tp}/{} recall={tp}/{total} AP={}",
            total - tp,
            tp + fp,
            fmt6(c.ap)
        );
    }
    for name in &report.excluded {
        info!("{name}: no ground truth, excluded from mAP");
    }
    info!("mAP={}", fmt6(report.map));

    emit(out.as_deref(), &report_csv(&report))?;
    if let Some(p) = pr_path {
        write_file(&p, &pr_curves_csv(&report))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn mine(a: &MineArgs, cfg: &Config, jobs: usize) -> Result<ExitCode> {
    let labels: Vec<ImageLevelLabels> = match (&a.labels, &a.gt_dir) {
        (Some(p), _) => parse_labels(&read_text(p)?).with_context(|| p.display().to_string())?,
        (None, Some(d)) => load_gt_dir(d)?.iter().map(image_level_labels).collect(),
        (None, None) => match (cfg.get::<PathBuf>("labels")?, cfg.get::<PathBuf>("gt_dir")?) {
            (Some(p), _) => parse_labels(&read_text(&p)?).with_context(|| p.display().to_string())?,
            (None, Some(d)) => load_gt_dir(&d)?.iter().map(image_level_labels).collect(),
            (None, None) => return Err(DataError::new("one of --labels or --gt-dir is required").into()),
        },
    };
    let det_path: PathBuf = cfg.require(a.detections.clone(), "detections")?;
    let mining = MiningConfig::new(cfg.pick_or(a.k, "k", 1)?)?;
    let out_dir: PathBuf = cfg.require(a.out_dir.clone(), "out_dir")?;

    let dets = load_detections(&det_path)?;
    let mined = mine_dataset_with_jobs(&dets, &labels, mining, jobs)?;
    for w in &mined.warnings {
        let MiningWarning::NoDetections { image_id, class_name } = w;
        warn!("{image_id}: no detections of labelled class {class_name}");
    }
    write_annotations(&out_dir, &mined.annotations())?;
    info!(
        "wrote {} pseudo-ground-truth files to {}",
        mined.images.len(),
        out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn oracle_config(o: &OracleArgs, cfg: &Config) -> Result<OracleConfig> {
    Ok(OracleConfig {
        seed: cfg.pick_or(o.seed, "seed", 0)?,
        jitter_frac: cfg.pick_or(o.jitter, "jitter", 0.0)?,
        miss_rate: cfg.pick_or(o.miss_rate, "miss_rate", 0.0)?,
        fp_rate: cfg.pick_or(o.fp_rate, "fp_rate", 0.0)?,
        score_noise: cfg.pick_or(o.score_noise, "score_noise", 0.0)?,
        epoch_gain: cfg.pick_or(o.epoch_gain, "epoch_gain", 0.0)?,
    })
}

pub fn refine_loop(a: &RefineArgs, cfg: &Config) -> Result<ExitCode> {
    let gt_dir: PathBuf = cfg.require(a.gt_dir.clone(), "gt_dir")?;
    let out_dir: PathBuf = cfg.require(a.out_dir.clone(), "out_dir")?;
    let policy = RefinementPolicy::new(
        cfg.pick_or(a.timing, "timing", TimingRule::EveryEpoch)?,
        cfg.pick_or(a.update, "update", UpdateRule::All)?,
        cfg.pick_or(a.k, "k", 1)?,
    )?;
    let max_epochs = cfg.pick_or(a.max_epochs, "max_epochs", 12)?;
    let iou = cfg.pick_or(a.iou, "iou", 0.5)?;
    let mut oracle = DetectorOracle::new(oracle_config(&a.oracle, cfg)?)?;

    let gt = load_gt_dir(&gt_dir)?;
    let run = run_refinement_loop(&mut oracle, &gt, &policy, max_epochs, iou)?;
    info!("initial pseudo-ground-truth mAP={}", fmt6(run.initial_map));
    info!("{} refinement events over {max_epochs} epochs", run.refinement_count());

    write_file(&out_dir.join("epochs.csv"), &epoch_series_csv(&run.epochs))?;
    let pgt: Vec<_> = run.final_pgt.iter().map(|p| p.to_annotation()).collect();
    write_annotations(&out_dir.join("pgt"), &pgt)?;
    Ok(ExitCode::SUCCESS)
}

pub fn cluster(a: &ClusterArgs, cfg: &Config) -> Result<ExitCode> {
    let det_path: PathBuf = cfg.require(a.detections.clone(), "detections")?;
    let edge = cfg.pick_or(a.edge_threshold, "edge_threshold", DEFAULT_EDGE_THRESHOLD)?;
    let assign = cfg.pick_or(a.assign_threshold, "assign_threshold", DEFAULT_ASSIGN_THRESHOLD)?;
    let out: Option<PathBuf> = cfg.pick(a.out.clone(), "out")?;

    let dets = load_detections(&det_path)?;
    let mut groups: BTreeMap<(&str, &str), Vec<ScoredProposal<f64>>> = BTreeMap::new();
    for (index, d) in dets.iter().enumerate() {
        groups
            .entry((d.image_id.as_str(), d.class_name.as_str()))
            .or_default()
            .push(ScoredProposal {
                bbox: d.bbox,
                score: d.score,
                index,
            });
    }

    let mut csv = String::from("image_id,class,index,center_index,iou\n");
    let mut clusters = 0;
    for ((image_id, class), props) in &groups {
        let graph = build_graph(props, edge)?;
        let centers = select_centers(&graph, props);
        let assignment = assign_clusters(props, &centers, assign)?;
        clusters += centers.len();
        for (p, cl) in props.iter().zip(&assignment.assignments) {
            let (center, iou) = match cl {
                Cluster::Center { center, iou } => (assignment.centers[*center].index.to_string(), *iou),
                Cluster::Background { best_iou } => ("background".to_string(), *best_iou),
            };
            let _ = writeln!(csv, "{image_id},{class},{},{center},{}", p.index, fmt6(iou));
        }
    }
    info!("{} detections in {} groups, {clusters} clusters", dets.len(), groups.len());
    emit(out.as_deref(), &csv)?;
    Ok(ExitCode::SUCCESS)
}

pub fn loss_check(a: &LossCheckArgs, cfg: &Config) -> Result<ExitCode> {
    let path: Option<PathBuf> = cfg.pick(a.fixtures.clone(), "fixtures")?;
    let seed = cfg.pick_or(a.seed, "seed", 0)?;
    let text = match &path {
        Some(p) => read_text(p)?,
        None => BUILTIN_LOSS_FIXTURES.to_string(),
    };
    let source = path.as_ref().map_or("built-in fixtures".into(), |p| p.display().to_string());
    let fixtures = parse_fixtures(&text).with_context(|| source.clone())?;
    let report = LossCheckReport::run(&fixtures, seed);
    emit(None, &report.to_string())?;
    if report.passed() {
        info!("all {} fixture cases and gradient checks passed", fixtures.len());
        Ok(ExitCode::SUCCESS)
    } else {
        log::error!("loss check failed against {source}");
        Ok(ExitCode::from(EXIT_DATA))
    }
}

pub fn simulate(a: &SimulateArgs, cfg: &Config) -> Result<ExitCode> {
    let out_dir: PathBuf = cfg.require(a.out_dir.clone(), "out_dir")?;
    let oracle_cfg = oracle_config(&a.oracle, cfg)?;
    let epochs = cfg.pick_or(a.epochs, "epochs", 1)?;
    if epochs == 0 {
        return Err(DataError::new("--epochs must be at least 1").into());
    }
    let mut oracle = DetectorOracle::new(oracle_cfg)?;

    let gt = match cfg.pick(a.gt_dir.clone(), "gt_dir")? {
        Some(dir) => load_gt_dir(&dir)?,
        None => {
            let defaults = SyntheticDatasetConfig::default();
            let class_names = match cfg.pick(a.classes.clone(), "classes")? {
                Some(list) => list
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
                None => defaults.class_names.clone(),
            };
            let max_classes = cfg.pick_or(a.max_classes, "max_classes", 2)?;
            let max_instances = cfg.pick_or(a.max_instances, "max_instances", 1)?;
            if class_names.is_empty() || max_classes == 0 || max_instances == 0 {
                return Err(DataError::new("need at least one class, class and instance").into());
            }
            if max_classes > class_names.len() || max_classes * max_instances > 12 {
                return Err(DataError::new(
                    "at most 12 objects fit in a synthetic image and max classes cannot exceed the class list",
                )
                .into());
            }
            let synth = SyntheticDatasetConfig {
                seed: oracle_cfg.seed,
                images: cfg.pick_or(a.images, "images", defaults.images)?,
                class_names,
                classes_per_image: (1, max_classes),
                instances_per_class: (1, max_instances),
                ..defaults
            };
            let gt = synthetic_dataset(&synth);
            write_annotations(&out_dir.join("gt"), &gt)?;
            gt
        }
    };

    for _ in 1..epochs {
        oracle.advance_epoch();
    }
    let dets: Vec<Detection<f64>> = gt.iter().flat_map(|g| oracle.detect(g)).collect();
    let labels: Vec<ImageLevelLabels> = gt.iter().map(image_level_labels).collect();
    write_file(&out_dir.join("detections.txt"), &write_detections(&dets))?;
    write_file(&out_dir.join("labels.txt"), &write_labels(&labels))?;
    info!("{} detections over {} images", dets.len(), gt.len());
    Ok(ExitCode::SUCCESS)
}
