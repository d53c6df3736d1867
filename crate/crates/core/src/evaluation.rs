//! VOC-2007 detection evaluation.
//!
//! Matching is greedy in descending score order (ties keep input order). Each
//! detection takes the still-unmatched ground-truth box of maximal IoU (lowest
//! index on IoU ties) and is a true positive when that IoU is `>=` the
//! threshold, consuming the box. Anything else, duplicates included, is a
//! false positive. Average precision is the 11-point interpolated form with
//! `max { p(r') : r' >= r }` at each recall level `r in {0, 0.1, ..., 1}`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

use crate::geometry::BBox;
use crate::parallel;
use crate::scalar::{fmt6, Scalar};
use crate::voc_io::{Detection, ImageAnnotation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("detection refers to unknown image id {0:?}")]
    UnknownImage(String),
    #[error("ground truth lists image id {0:?} more than once")]
    DuplicateImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    TruePositive,
    FalsePositive,
}

/// Outcome of matching one class in one image.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult<T = f64> {
    /// One flag per input detection, in input order.
    pub outcomes: Vec<Outcome>,
    /// For true positives, the index of the consumed ground-truth box.
    pub matched_gt: Vec<Option<usize>>,
    pub false_negatives: usize,
    pub iou_threshold: T,
}

impl<T: Scalar> MatchResult<T> {
    pub fn true_positives(&self) -> usize {
        self.outcomes.iter().filter(|o| **o == Outcome::TruePositive).count()
    }

    pub fn false_positives(&self) -> usize {
        self.outcomes.len() - self.true_positives()
    }
}

fn check_threshold<T: Scalar>(iou_threshold: T) -> Result<(), EvalError> {
    if iou_threshold > T::zero() && iou_threshold < T::one() {
        Ok(())
    } else {
        Err(EvalError::Contract(format!(
            "IoU threshold {iou_threshold} outside (0, 1)"
        )))
    }
}

/// Indices of `scores` in descending order; equal scores keep input order.
pub(crate) fn rank_by_score<T: Scalar>(scores: impl Iterator<Item = T>) -> Vec<usize> {
    let scores: Vec<T> = scores.collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("scores are finite"));
    order
}

/// Greedy match of one detection against the unconsumed boxes.
fn best_unmatched<T: Scalar>(det: &BBox<T>, gts: &[BBox<T>], consumed: &[bool]) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (j, gt) in gts.iter().enumerate() {
        if consumed[j] {
            continue;
        }
        let v = det.iou(gt);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best
}

pub fn match_class_in_image<T: Scalar>(
    dets: &[Detection<T>],
    gts: &[BBox<T>],
    iou_threshold: T,
) -> Result<MatchResult<T>, EvalError> {
    check_threshold(iou_threshold)?;
    if let Some(first) = dets.first() {
        if let Some(bad) = dets
            .iter()
            .find(|d| d.class_name != first.class_name || d.image_id != first.image_id)
        {
            return Err(EvalError::Contract(format!(
                "mixed detections: ({}, {}) and ({}, {})",
                first.image_id, first.class_name, bad.image_id, bad.class_name
            )));
        }
    }
    let mut consumed = vec![false; gts.len()];
    let mut outcomes = vec![Outcome::FalsePositive; dets.len()];
    let mut matched_gt = vec![None; dets.len()];
    for i in rank_by_score(dets.iter().map(|d| d.score)) {
        if let Some((j, v)) = best_unmatched(&dets[i].bbox, gts, &consumed) {
            if v >= iou_threshold {
                consumed[j] = true;
                outcomes[i] = Outcome::TruePositive;
                matched_gt[i] = Some(j);
            }
        }
    }
    Ok(MatchResult {
        outcomes,
        matched_gt,
        false_negatives: consumed.iter().filter(|c| !**c).count(),
        iou_threshold,
    })
}

/// Precision and recall from raw counts; zero when a denominator is zero.
pub fn precision_recall_counts<T: Scalar>(tp: usize, fp: usize, fn_: usize) -> (T, T) {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            T::zero()
        } else {
            T::from_count(num) / T::from_count(den)
        }
    };
    (ratio(tp, tp + fp), ratio(tp, tp + fn_))
}

pub fn precision_recall<T: Scalar>(m: &MatchResult<T>) -> (T, T) {
    precision_recall_counts(m.true_positives(), m.false_positives(), m.false_negatives)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrPoint<T = f64> {
    pub score: T,
    pub outcome: Outcome,
    pub recall: T,
    pub precision: T,
}

/// Precision/recall after each ranked detection of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve<T = f64> {
    pub points: Vec<PrPoint<T>>,
    /// Ground-truth instances of the class (TP + FN); the recall denominator.
    pub total_positives: usize,
}

impl<T: Scalar> PrCurve<T> {
    /// A class without ground truth has no defined recall and is left out of mAP.
    pub fn is_excluded(&self) -> bool {
        self.total_positives == 0
    }
}

/// Build the ranked PR curve of one class over all images. `gts` maps image
/// id to that image's boxes of the class; missing ids have no boxes.
pub fn pr_curve<T: Scalar>(
    dets: &[Detection<T>],
    gts: &HashMap<String, Vec<BBox<T>>>,
    iou_threshold: T,
) -> Result<PrCurve<T>, EvalError> {
    check_threshold(iou_threshold)?;
    if let Some(first) = dets.first() {
        if let Some(bad) = dets.iter().find(|d| d.class_name != first.class_name) {
            return Err(EvalError::Contract(format!(
                "mixed classes {} and {}",
                first.class_name, bad.class_name
            )));
        }
    }
    let total_positives: usize = gts.values().map(Vec::len).sum();
    let mut consumed: HashMap<&str, Vec<bool>> = gts
        .iter()
        .map(|(id, boxes)| (id.as_str(), vec![false; boxes.len()]))
        .collect();
    let empty: Vec<BBox<T>> = Vec::new();
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut points = Vec::with_capacity(dets.len());
    for i in rank_by_score(dets.iter().map(|d| d.score)) {
        let det = &dets[i];
        let boxes = gts.get(&det.image_id).unwrap_or(&empty);
        let mut outcome = Outcome::FalsePositive;
        if let Some(flags) = consumed.get_mut(det.image_id.as_str()) {
            if let Some((j, v)) = best_unmatched(&det.bbox, boxes, flags) {
                if v >= iou_threshold {
                    flags[j] = true;
                    outcome = Outcome::TruePositive;
                }
            }
        }
        match outcome {
            Outcome::TruePositive => tp += 1,
            Outcome::FalsePositive => fp += 1,
        }
        let (precision, recall) = precision_recall_counts(tp, fp, total_positives - tp);
        points.push(PrPoint {
            score: det.score,
            outcome,
            recall,
            precision,
        });
    }
    Ok(PrCurve {
        points,
        total_positives,
    })
}

/// 11-point interpolated average precision.
pub fn ap_11point<T: Scalar>(curve: &PrCurve<T>) -> T {
    let ten = T::from_count(10);
    let mut sum = T::zero();
    for level in 0..=10 {
        let r = T::from_count(level) / ten;
        let interp = curve
            .points
            .iter()
            .filter(|p| p.recall >= r)
            .map(|p| p.precision)
            .fold(T::zero(), crate::scalar::max);
        sum = sum + interp;
    }
    sum / T::from_count(11)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport<T = f64> {
    pub ap: T,
    pub curve: PrCurve<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport<T = f64> {
    /// Classes with at least one ground-truth instance.
    pub classes: BTreeMap<String, ClassReport<T>>,
    /// Classes seen only in detections.
    pub excluded: Vec<String>,
    pub map: T,
}

impl<T: Scalar> EvalReport<T> {
    pub fn ap(&self, class_name: &str) -> Option<T> {
        self.classes.get(class_name).map(|c| c.ap)
    }
}

pub fn evaluate<T: Scalar>(
    dets: &[Detection<T>],
    gt: &[ImageAnnotation<T>],
    iou_threshold: T,
) -> Result<EvalReport<T>, EvalError> {
    evaluate_with_jobs(dets, gt, iou_threshold, 1)
}

/// [`evaluate`] with per-class work spread over `jobs` threads. The result is
/// identical for every `jobs`.
pub fn evaluate_with_jobs<T: Scalar>(
    dets: &[Detection<T>],
    gt: &[ImageAnnotation<T>],
    iou_threshold: T,
    jobs: usize,
) -> Result<EvalReport<T>, EvalError> {
    check_threshold(iou_threshold)?;
    let mut ids = BTreeSet::new();
    for a in gt {
        if !ids.insert(a.image_id.as_str()) {
            return Err(EvalError::DuplicateImage(a.image_id.clone()));
        }
    }
    if let Some(d) = dets.iter().find(|d| !ids.contains(d.image_id.as_str())) {
        return Err(EvalError::UnknownImage(d.image_id.clone()));
    }

    let mut class_names: BTreeSet<&str> = gt
        .iter()
        .flat_map(|a| a.objects.iter().map(|o| o.class_name.as_str()))
        .collect();
    class_names.extend(dets.iter().map(|d| d.class_name.as_str()));
    let class_names: Vec<&str> = class_names.into_iter().collect();

    let curves = parallel::map_ordered(&class_names, jobs, |&class_name| {
        let class_dets: Vec<Detection<T>> = dets
            .iter()
            .filter(|d| d.class_name == class_name)
            .cloned()
            .collect();
        let mut boxes: HashMap<String, Vec<BBox<T>>> = HashMap::new();
        for a in gt {
            let b: Vec<BBox<T>> = a.boxes_of(class_name).collect();
            if !b.is_empty() {
                boxes.insert(a.image_id.clone(), b);
            }
        }
        pr_curve(&class_dets, &boxes, iou_threshold)
    });

    let mut classes = BTreeMap::new();
    let mut excluded = Vec::new();
    for (name, curve) in class_names.iter().zip(curves) {
        let curve = curve?;
        if curve.is_excluded() {
            excluded.push(name.to_string());
        } else {
            let ap = ap_11point(&curve);
            classes.insert(name.to_string(), ClassReport { ap, curve });
        }
    }
    let map = if classes.is_empty() {
        T::zero()
    } else {
        classes.values().fold(T::zero(), |acc, c| acc + c.ap) / T::from_count(classes.len())
    };
    Ok(EvalReport {
        classes,
        excluded,
        map,
    })
}

/// `class,ap` rows sorted by class, then `mAP,<value>`.
pub fn report_csv<T: Scalar>(report: &EvalReport<T>) -> String {
    let mut out = String::from("class,ap\n");
    for (name, c) in &report.classes {
        let _ = writeln!(out, "{name},{}", fmt6(c.ap));
    }
    let _ = writeln!(out, "mAP,{}", fmt6(report.map));
    out
}

/// `class,rank,score,recall,precision`, one row per ranked detection.
pub fn pr_curves_csv<T: Scalar>(report: &EvalReport<T>) -> String {
    let mut out = String::from("class,rank,score,recall,precision\n");
    for (name, c) in &report.classes {
        for (rank, p) in c.curve.points.iter().enumerate() {
            let _ = writeln!(
                out,
                "{name},{},{},{},{}",
                rank + 1,
                fmt6(p.score),
                fmt6(p.recall),
                fmt6(p.precision)
            );
        }
    }
    out
}
