//! Scheduled refinement of pseudo ground truth during second-phase training.
//!
//! A [`RefinementPolicy`] pairs a [`TimingRule`] (at which epochs to refine)
//! with an [`UpdateRule`] (which of the current boxes to replace with fresh
//! detector output). The epoch loop keeps one detector instance alive for the
//! whole run; refinement never rebuilds it.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::num::NonZeroUsize;
use std::str::FromStr;

use thiserror::Error;

use crate::evaluation::{evaluate, rank_by_score, EvalError};
use crate::mining::{group_by_image, mine_dataset, top_k_of_class, MiningConfig, MiningError, PseudoAnnotation};
use crate::scalar::{fmt6, Scalar};
use crate::sim_detector::Detector;
use crate::voc_io::{image_level_labels, Detection, ImageAnnotation, ImageLevelLabels};

pub use crate::mining::ScoredPgtEntry;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RefinementError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unknown {kind} {value:?}")]
    UnknownName { kind: &'static str, value: String },
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimingRule {
    EveryEpoch,
    EveryThird,
    LastThree,
    OnceAtTwoThirds,
}

impl TimingRule {
    pub const ALL: [TimingRule; 4] = [
        TimingRule::EveryEpoch,
        TimingRule::EveryThird,
        TimingRule::LastThree,
        TimingRule::OnceAtTwoThirds,
    ];
}

impl FromStr for TimingRule {
    type Err = RefinementError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "every" => Ok(Self::EveryEpoch),
            "third" => Ok(Self::EveryThird),
            "last3" => Ok(Self::LastThree),
            "once23" => Ok(Self::OnceAtTwoThirds),
            _ => Err(RefinementError::UnknownName {
                kind: "timing rule",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for TimingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::EveryEpoch => "every",
            Self::EveryThird => "third",
            Self::LastThree => "last3",
            Self::OnceAtTwoThirds => "once23",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpdateRule {
    All,
    BestHalf,
    WorstHalf,
}

impl UpdateRule {
    pub const ALL: [UpdateRule; 3] = [UpdateRule::All, UpdateRule::BestHalf, UpdateRule::WorstHalf];
}

impl FromStr for UpdateRule {
    type Err = RefinementError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::All),
            "best-half" => Ok(Self::BestHalf),
            "worst-half" => Ok(Self::WorstHalf),
            _ => Err(RefinementError::UnknownName {
                kind: "update rule",
                value: s.into(),
            }),
        }
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::All => "all",
            Self::BestHalf => "best-half",
            Self::WorstHalf => "worst-half",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefinementPolicy {
    pub timing: TimingRule,
    pub update: UpdateRule,
    k: NonZeroUsize,
}

impl RefinementPolicy {
    /// A half rule with `k = 1` replaces nothing; that is allowed but logged.
    pub fn new(timing: TimingRule, update: UpdateRule, k: usize) -> Result<Self, RefinementError> {
        let k = NonZeroUsize::new(k).ok_or_else(|| RefinementError::Contract("k must be at least 1".into()))?;
        let policy = Self { timing, update, k };
        if policy.is_noop_update() {
            log::warn!("update rule {update} with k=1 never replaces any box");
        }
        Ok(policy)
    }

    pub fn k(&self) -> usize {
        self.k.get()
    }

    pub fn is_noop_update(&self) -> bool {
        self.update != UpdateRule::All && self.k.get() < 2
    }
}

/// Whether to refine at `epoch` (1-based) of a run of `max_epochs`.
pub fn should_refine(epoch: u32, max_epochs: u32, timing: TimingRule) -> Result<bool, RefinementError> {
    if epoch == 0 || epoch > max_epochs {
        return Err(RefinementError::Contract(format!(
            "epoch {epoch} outside 1..={max_epochs}"
        )));
    }
    if max_epochs < 3 && matches!(timing, TimingRule::EveryThird | TimingRule::LastThree) {
        return Err(RefinementError::Contract(format!(
            "{timing} needs at least 3 epochs, got {max_epochs}"
        )));
    }
    Ok(match timing {
        TimingRule::EveryEpoch => true,
        TimingRule::EveryThird => epoch.is_multiple_of(3),
        TimingRule::LastThree => epoch > max_epochs - 3,
        TimingRule::OnceAtTwoThirds => epoch == two_thirds_epoch(max_epochs),
    })
}

/// `round(2 * max_epochs / 3)`, halves rounded up.
pub fn two_thirds_epoch(max_epochs: u32) -> u32 {
    (4 * max_epochs + 3) / 6
}

/// Update the pseudo ground truth of one (image, class).
///
/// `current` holds at most `k` entries; `fresh` is the detector's new output
/// for the same image and class, in any order.
///
/// * `All`: the top `min(k, |fresh|)` fresh detections.
/// * `BestHalf` / `WorstHalf`: `floor(m / 2)` of the `m` current entries, the
///   highest- or lowest-scored by stored score, are replaced by the best fresh
///   detections that are not already present. Fewer fresh detections than
///   slots means fewer replacements: best-half keeps its lowest slots,
///   worst-half its highest.
///
/// The result is ranked by score, ties in slot order.
pub fn refine_image_class<T: Scalar>(
    current: &[ScoredPgtEntry<T>],
    fresh: &[Detection<T>],
    update: UpdateRule,
    k: usize,
) -> Vec<ScoredPgtEntry<T>> {
    let fresh_ranked: Vec<&Detection<T>> = rank_by_score(fresh.iter().map(|d| d.score))
        .into_iter()
        .map(|i| &fresh[i])
        .collect();
    if update == UpdateRule::All {
        return fresh_ranked
            .into_iter()
            .take(k)
            .map(ScoredPgtEntry::from_detection)
            .collect();
    }

    let ranked_slots = rank_by_score(current.iter().map(|e| e.score));
    let half = current.len() / 2;
    let replace: &[usize] = match update {
        UpdateRule::BestHalf => &ranked_slots[..half],
        _ => &ranked_slots[current.len() - half..],
    };
    let kept: Vec<&ScoredPgtEntry<T>> = ranked_slots
        .iter()
        .filter(|i| !replace.contains(i))
        .map(|&i| &current[i])
        .collect();

    let mut chosen: Vec<ScoredPgtEntry<T>> = Vec::with_capacity(half);
    for d in fresh_ranked {
        if chosen.len() == half {
            break;
        }
        let same = |e: &ScoredPgtEntry<T>| e.class_name == d.class_name && e.bbox == d.bbox;
        if kept.iter().any(|e| same(e)) || chosen.iter().any(same) {
            continue;
        }
        chosen.push(ScoredPgtEntry::from_detection(d));
    }

    let slots: &[usize] = match update {
        UpdateRule::BestHalf => &replace[..chosen.len()],
        _ => &replace[replace.len() - chosen.len()..],
    };
    let mut result = current.to_vec();
    for (&slot, entry) in slots.iter().zip(chosen) {
        result[slot] = entry;
    }
    rank_by_score(result.iter().map(|e| e.score))
        .into_iter()
        .map(|i| result[i].clone())
        .collect()
}

/// Apply [`refine_image_class`] to every (image, labelled class). Output is
/// sorted by image id, one entry per labelled image, classes in name order.
pub fn refine_dataset<T: Scalar>(
    pgt: &[PseudoAnnotation<T>],
    fresh: &[Detection<T>],
    labels: &[ImageLevelLabels],
    policy: &RefinementPolicy,
) -> Result<Vec<PseudoAnnotation<T>>, RefinementError> {
    let (ordered, grouped) = group_by_image(fresh, labels)?;
    let mut current: HashMap<&str, &PseudoAnnotation<T>> = HashMap::new();
    for p in pgt {
        if current.insert(p.image_id.as_str(), p).is_some() {
            return Err(MiningError::DuplicateImage(p.image_id.clone()).into());
        }
    }
    if let Some(p) = pgt.iter().find(|p| !grouped.contains_key(p.image_id.as_str())) {
        return Err(MiningError::UnknownImage(p.image_id.clone()).into());
    }

    let mut out = Vec::with_capacity(ordered.len());
    for l in ordered {
        let image_fresh = &grouped[l.image_id.as_str()];
        let prev = current.get(l.image_id.as_str());
        let mut entries = Vec::new();
        for class_name in &l.classes {
            let cur: Vec<ScoredPgtEntry<T>> = prev
                .map(|p| p.entries.iter().filter(|e| &e.class_name == class_name).cloned().collect())
                .unwrap_or_default();
            let class_fresh: Vec<Detection<T>> = match policy.update {
                UpdateRule::All => top_k_of_class(image_fresh, class_name, policy.k()).into_iter().cloned().collect(),
                _ => image_fresh.iter().filter(|d| &d.class_name == class_name).cloned().collect(),
            };
            entries.extend(refine_image_class(&cur, &class_fresh, policy.update, policy.k()));
        }
        out.push(PseudoAnnotation {
            image_id: l.image_id.clone(),
            size: l.size.or_else(|| prev.and_then(|p| p.size)),
            entries,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord<T = f64> {
    pub epoch: u32,
    pub refined: bool,
    /// mAP of the pseudo ground truth (ranked by its stored scores) against the real ground truth.
    pub map: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinementRun<T = f64> {
    /// Mined from the detector before the first epoch.
    pub initial_pgt: Vec<PseudoAnnotation<T>>,
    pub initial_map: T,
    pub epochs: Vec<EpochRecord<T>>,
    pub final_pgt: Vec<PseudoAnnotation<T>>,
}

impl<T: Scalar> RefinementRun<T> {
    pub fn refinement_count(&self) -> usize {
        self.epochs.iter().filter(|e| e.refined).count()
    }
}

/// `epoch,refined,map` with `refined` as 0/1.
pub fn epoch_series_csv<T: Scalar>(records: &[EpochRecord<T>]) -> String {
    let mut out = String::from("epoch,refined,map\n");
    for r in records {
        let _ = writeln!(out, "{},{},{}", r.epoch, u8::from(r.refined), fmt6(r.map));
    }
    out
}

fn pgt_map<T: Scalar>(pgt: &[PseudoAnnotation<T>], gt: &[ImageAnnotation<T>], iou_threshold: T) -> Result<T, EvalError> {
    let dets: Vec<Detection<T>> = pgt.iter().flat_map(PseudoAnnotation::to_detections).collect();
    Ok(evaluate(&dets, gt, iou_threshold)?.map)
}

/// Mine initial pseudo ground truth from `detector`, then run `max_epochs`
/// epochs. Each epoch advances the detector, refines when the timing rule
/// fires, and scores the current pseudo ground truth against `gt`.
pub fn run_refinement_loop<T: Scalar, D: Detector<T>>(
    detector: &mut D,
    gt: &[ImageAnnotation<T>],
    policy: &RefinementPolicy,
    max_epochs: u32,
    iou_threshold: T,
) -> Result<RefinementRun<T>, RefinementError> {
    if max_epochs == 0 {
        return Err(RefinementError::Contract("max_epochs must be at least 1".into()));
    }
    // Validate the schedule up front so a bad policy fails before any work.
    should_refine(1, max_epochs, policy.timing)?;

    let labels: Vec<ImageLevelLabels> = gt.iter().map(image_level_labels).collect();
    let detect_all = |d: &mut D| gt.iter().flat_map(|g| d.detect(g)).collect::<Vec<_>>();

    let mining = MiningConfig::new(policy.k())?;
    let initial = mine_dataset(&detect_all(detector), &labels, mining)?.images;
    let initial_map = pgt_map(&initial, gt, iou_threshold)?;

    let mut pgt = initial.clone();
    let mut epochs = Vec::with_capacity(max_epochs as usize);
    for epoch in 1..=max_epochs {
        detector.advance_epoch();
        let refined = should_refine(epoch, max_epochs, policy.timing)?;
        if refined {
            let fresh = detect_all(detector);
            pgt = refine_dataset(&pgt, &fresh, &labels, policy)?;
            log::info!("epoch {epoch}: refined pseudo ground truth ({})", policy.update);
        }
        epochs.push(EpochRecord {
            epoch,
            refined,
            map: pgt_map(&pgt, gt, iou_threshold)?,
        });
    }
    Ok(RefinementRun {
        initial_pgt: initial,
        initial_map,
        epochs,
        final_pgt: pgt,
    })
}
