//! Top-k pseudo-ground-truth mining.
//!
//! For every image and every class in its image-level label set, detections of
//! that class are ranked by score and the best `k` become pseudo ground truth.
//! Classes outside the label set are dropped even when detected.

use std::collections::{BTreeMap, HashMap};
use std::num::NonZeroUsize;

use thiserror::Error;

use crate::evaluation::rank_by_score;
use crate::geometry::BBox;
use crate::parallel;
use crate::scalar::Scalar;
use crate::voc_io::{AnnotatedObject, Detection, ImageAnnotation, ImageLevelLabels};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MiningError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("detection refers to unlabelled image id {0:?}")]
    UnknownImage(String),
    #[error("image id {0:?} labelled more than once")]
    DuplicateImage(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MiningConfig {
    k: NonZeroUsize,
}

impl MiningConfig {
    pub fn new(k: usize) -> Result<Self, MiningError> {
        NonZeroUsize::new(k).map(|k| Self { k }).ok_or(MiningError::ZeroK)
    }

    pub fn k(&self) -> usize {
        self.k.get()
    }
}

/// One pseudo-ground-truth box together with the score it was selected with.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPgtEntry<T = f64> {
    pub class_name: String,
    pub bbox: BBox<T>,
    pub score: T,
}

impl<T: Scalar> ScoredPgtEntry<T> {
    pub fn from_detection(d: &Detection<T>) -> Self {
        Self {
            class_name: d.class_name.clone(),
            bbox: d.bbox,
            score: d.score,
        }
    }
}

/// Pseudo ground truth of one image, scores retained.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoAnnotation<T = f64> {
    pub image_id: String,
    pub size: Option<(u32, u32)>,
    pub entries: Vec<ScoredPgtEntry<T>>,
}

impl<T: Scalar> PseudoAnnotation<T> {
    /// Drop the scores. Without a known image size, the smallest integer
    /// extent covering every box is used.
    pub fn to_annotation(&self) -> ImageAnnotation<T> {
        let (width, height) = self.size.unwrap_or_else(|| {
            let extent = |f: fn(&BBox<T>) -> T| {
                self.entries
                    .iter()
                    .map(|e| f(&e.bbox).to_f64_lossy().ceil() as u32)
                    .max()
                    .unwrap_or(1)
                    .max(1)
            };
            (extent(BBox::xmax), extent(BBox::ymax))
        });
        ImageAnnotation {
            image_id: self.image_id.clone(),
            width,
            height,
            objects: self
                .entries
                .iter()
                .map(|e| AnnotatedObject::new(e.class_name.clone(), e.bbox))
                .collect(),
        }
    }

    /// The entries as detections, for scoring pseudo ground truth against real ground truth.
    pub fn to_detections(&self) -> Vec<Detection<T>> {
        self.entries
            .iter()
            .map(|e| Detection {
                image_id: self.image_id.clone(),
                class_name: e.class_name.clone(),
                score: e.score,
                bbox: e.bbox,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MiningWarning {
    /// A labelled class had no detections, so it contributes no boxes.
    NoDetections { image_id: String, class_name: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedImage<T = f64> {
    pub pgt: PseudoAnnotation<T>,
    pub warnings: Vec<MiningWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinedDataset<T = f64> {
    /// Sorted by image id.
    pub images: Vec<PseudoAnnotation<T>>,
    pub warnings: Vec<MiningWarning>,
}

impl<T: Scalar> MinedDataset<T> {
    pub fn annotations(&self) -> Vec<ImageAnnotation<T>> {
        self.images.iter().map(PseudoAnnotation::to_annotation).collect()
    }

    pub fn detections(&self) -> Vec<Detection<T>> {
        self.images.iter().flat_map(PseudoAnnotation::to_detections).collect()
    }
}

/// Top `k` detections of `class_name`, best first. Equal scores keep input order.
pub(crate) fn top_k_of_class<'a, T: Scalar>(
    dets: &'a [Detection<T>],
    class_name: &str,
    k: usize,
) -> Vec<&'a Detection<T>> {
    let of_class: Vec<&Detection<T>> = dets.iter().filter(|d| d.class_name == class_name).collect();
    rank_by_score(of_class.iter().map(|d| d.score))
        .into_iter()
        .take(k)
        .map(|i| of_class[i])
        .collect()
}

pub fn mine_image<T: Scalar>(
    dets: &[Detection<T>],
    labels: &ImageLevelLabels,
    cfg: MiningConfig,
) -> Result<MinedImage<T>, MiningError> {
    if let Some(d) = dets.iter().find(|d| d.image_id != labels.image_id) {
        return Err(MiningError::Contract(format!(
            "detection for {:?} passed with labels of {:?}",
            d.image_id, labels.image_id
        )));
    }
    Ok(mine_checked(dets, labels, cfg))
}

fn mine_checked<T: Scalar>(dets: &[Detection<T>], labels: &ImageLevelLabels, cfg: MiningConfig) -> MinedImage<T> {
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for class_name in &labels.classes {
        let top = top_k_of_class(dets, class_name, cfg.k());
        if top.is_empty() {
            warnings.push(MiningWarning::NoDetections {
                image_id: labels.image_id.clone(),
                class_name: class_name.clone(),
            });
        }
        entries.extend(top.into_iter().map(ScoredPgtEntry::from_detection));
    }
    MinedImage {
        pgt: PseudoAnnotation {
            image_id: labels.image_id.clone(),
            size: labels.size,
            entries,
        },
        warnings,
    }
}

type Grouped<'a, T> = (Vec<&'a ImageLevelLabels>, HashMap<&'a str, Vec<Detection<T>>>);

/// Group detections by image, rejecting ids outside `labels`.
pub(crate) fn group_by_image<'a, T: Scalar>(
    dets: &[Detection<T>],
    labels: &'a [ImageLevelLabels],
) -> Result<Grouped<'a, T>, MiningError> {
    let mut by_id: BTreeMap<&str, &ImageLevelLabels> = BTreeMap::new();
    for l in labels {
        if by_id.insert(l.image_id.as_str(), l).is_some() {
            return Err(MiningError::DuplicateImage(l.image_id.clone()));
        }
    }
    let mut grouped: HashMap<&str, Vec<Detection<T>>> = by_id.keys().map(|&id| (id, Vec::new())).collect();
    for d in dets {
        grouped
            .get_mut(d.image_id.as_str())
            .ok_or_else(|| MiningError::UnknownImage(d.image_id.clone()))?
            .push(d.clone());
    }
    Ok((by_id.into_values().collect(), grouped))
}

pub fn mine_dataset<T: Scalar>(
    dets: &[Detection<T>],
    labels: &[ImageLevelLabels],
    cfg: MiningConfig,
) -> Result<MinedDataset<T>, MiningError> {
    mine_dataset_with_jobs(dets, labels, cfg, 1)
}

pub fn mine_dataset_with_jobs<T: Scalar>(
    dets: &[Detection<T>],
    labels: &[ImageLevelLabels],
    cfg: MiningConfig,
    jobs: usize,
) -> Result<MinedDataset<T>, MiningError> {
    let (ordered, grouped) = group_by_image(dets, labels)?;
    let mined = parallel::map_ordered(&ordered, jobs, |l| {
        mine_checked(&grouped[l.image_id.as_str()], l, cfg)
    });
    let mut images = Vec::with_capacity(mined.len());
    let mut warnings = Vec::new();
    for m in mined {
        images.push(m.pgt);
        warnings.extend(m.warnings);
    }
    Ok(MinedDataset { images, warnings })
}
