//! Seeded synthetic detector that perturbs ground truth.
//!
//! All randomness comes from a `ChaCha8Rng` seeded with
//! `rand::SeedableRng::seed_from_u64(seed)`. Draw order per call is fixed:
//!
//! 1. for each ground-truth object in order: one miss draw, four corner draws,
//!    one score-noise draw (the corner and noise draws are skipped for missed
//!    objects);
//! 2. one Poisson draw for the spurious count (skipped when `fp_rate == 0` or the
//!    image has no labels), then per spurious box: class, width, height, x, y,
//!    score.
//!
//! Identical config plus identical call sequence therefore gives identical
//! output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use thiserror::Error;

use crate::geometry::BBox;
use crate::scalar::Scalar;
use crate::voc_io::{AnnotatedObject, Detection, ImageAnnotation};

/// Spurious boxes score uniformly in `[0, SPURIOUS_SCORE_MAX)`.
pub const SPURIOUS_SCORE_MAX: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("{field} = {value} out of range")]
    OutOfRange { field: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    pub seed: u64,
    /// Corner perturbation as a fraction of box width/height.
    pub jitter_frac: f64,
    pub miss_rate: f64,
    /// Expected spurious boxes per image.
    pub fp_rate: f64,
    pub score_noise: f64,
    /// Per-epoch multiplicative shrink of jitter and miss rate.
    pub epoch_gain: f64,
}

impl OracleConfig {
    /// Noise-free oracle: emits ground truth with score 1.
    pub fn exact(seed: u64) -> Self {
        Self {
            seed,
            jitter_frac: 0.0,
            miss_rate: 0.0,
            fp_rate: 0.0,
            score_noise: 0.0,
            epoch_gain: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let nonneg = |field, value: f64| {
            if value.is_finite() && value >= 0.0 {
                Ok(())
            } else {
                Err(OracleError::OutOfRange { field, value })
            }
        };
        nonneg("jitter_frac", self.jitter_frac)?;
        nonneg("fp_rate", self.fp_rate)?;
        nonneg("score_noise", self.score_noise)?;
        nonneg("epoch_gain", self.epoch_gain)?;
        nonneg("miss_rate", self.miss_rate)?;
        if self.miss_rate > 1.0 {
            return Err(OracleError::OutOfRange {
                field: "miss_rate",
                value: self.miss_rate,
            });
        }
        Ok(())
    }
}

/// Anything that can stand in for a trained detector across epochs.
pub trait Detector<T: Scalar> {
    fn advance_epoch(&mut self);
    fn detect(&mut self, gt: &ImageAnnotation<T>) -> Vec<Detection<T>>;
}

#[derive(Debug, Clone)]
pub struct DetectorOracle {
    config: OracleConfig,
    epoch: u32,
    jitter_frac: f64,
    miss_rate: f64,
    rng: ChaCha8Rng,
}

impl DetectorOracle {
    pub fn new(config: OracleConfig) -> Result<Self, OracleError> {
        config.validate()?;
        Ok(Self {
            config,
            epoch: 1,
            jitter_frac: config.jitter_frac,
            miss_rate: config.miss_rate,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    /// Starts at 1.
    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn effective_jitter(&self) -> f64 {
        self.jitter_frac
    }

    pub fn effective_miss_rate(&self) -> f64 {
        self.miss_rate
    }

    pub fn advance_epoch(&mut self) {
        let keep = (1.0 - self.config.epoch_gain).max(0.0);
        self.epoch += 1;
        self.jitter_frac = (self.jitter_frac * keep).max(0.0);
        self.miss_rate = (self.miss_rate * keep).max(0.0);
    }

    pub fn detect<T: Scalar>(&mut self, gt: &ImageAnnotation<T>) -> Vec<Detection<T>> {
        let mut out = Vec::new();
        let (w_img, h_img) = (gt.width as f64, gt.height as f64);
        for obj in &gt.objects {
            if self.rng.random::<f64>() < self.miss_rate {
                continue;
            }
            let d = self.perturb(obj, w_img, h_img);
            out.push(Detection {
                image_id: gt.image_id.clone(),
                class_name: obj.class_name.clone(),
                score: d.1,
                bbox: d.0,
            });
        }

        let mut labels: Vec<&str> = gt.objects.iter().map(|o| o.class_name.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if self.config.fp_rate > 0.0 && !labels.is_empty() {
            let count = Poisson::new(self.config.fp_rate)
                .expect("validated rate")
                .sample(&mut self.rng) as usize;
            for _ in 0..count {
                let class = labels[self.rng.random_range(0..labels.len())];
                let bw = w_img * self.rng.random_range(0.1..0.5);
                let bh = h_img * self.rng.random_range(0.1..0.5);
                let x = (w_img - bw) * self.rng.random::<f64>();
                let y = (h_img - bh) * self.rng.random::<f64>();
                let score = SPURIOUS_SCORE_MAX * self.rng.random::<f64>();
                if let (Some(bbox), Some(score)) = (to_box::<T>([x, y, x + bw, y + bh]), T::from_f64(score)) {
                    out.push(Detection {
                        image_id: gt.image_id.clone(),
                        class_name: class.to_string(),
                        score,
                        bbox,
                    });
                }
            }
        }
        out
    }

    fn perturb<T: Scalar>(&mut self, obj: &AnnotatedObject<T>, w_img: f64, h_img: f64) -> (BBox<T>, T) {
        let orig = obj.bbox.corners().map(Scalar::to_f64_lossy);
        let (bw, bh) = (orig[2] - orig[0], orig[3] - orig[1]);
        let j = self.jitter_frac;
        let mut c = orig;
        for (i, v) in c.iter_mut().enumerate() {
            let dim = if i % 2 == 0 { bw } else { bh };
            let u: f64 = self.rng.random();
            *v += (2.0 * u - 1.0) * j * dim;
        }
        let noise_u: f64 = self.rng.random();

        if j == 0.0 {
            let score = (1.0 - self.config.score_noise * noise_u).clamp(0.0, 1.0);
            let score = if score == 1.0 { T::one() } else { T::from_f64(score).unwrap_or(T::one()) };
            return (obj.bbox, score);
        }

        let (x0, x1) = (c[0].min(c[2]).clamp(0.0, w_img), c[0].max(c[2]).clamp(0.0, w_img));
        let (y0, y1) = (c[1].min(c[3]).clamp(0.0, h_img), c[1].max(c[3]).clamp(0.0, h_img));
        let emitted = if x1 - x0 >= 1.0 && y1 - y0 >= 1.0 {
            [x0, y0, x1, y1]
        } else {
            orig
        };
        let displacement = (((emitted[0] - orig[0]).powi(2) + (emitted[1] - orig[1]).powi(2)).sqrt()
            + ((emitted[2] - orig[2]).powi(2) + (emitted[3] - orig[3]).powi(2)).sqrt())
            / 2.0;
        let base = (1.0 - displacement / bw.hypot(bh)).max(0.0);
        let score = (base - self.config.score_noise * noise_u).clamp(0.0, 1.0);
        match (to_box::<T>(emitted), T::from_f64(score)) {
            (Some(b), Some(s)) => (b, s),
            _ => (obj.bbox, T::one()),
        }
    }
}

fn to_box<T: Scalar>(c: [f64; 4]) -> Option<BBox<T>> {
    BBox::new(T::from_f64(c[0])?, T::from_f64(c[1])?, T::from_f64(c[2])?, T::from_f64(c[3])?).ok()
}

impl<T: Scalar> Detector<T> for DetectorOracle {
    fn advance_epoch(&mut self) {
        DetectorOracle::advance_epoch(self)
    }

    fn detect(&mut self, gt: &ImageAnnotation<T>) -> Vec<Detection<T>> {
        DetectorOracle::detect(self, gt)
    }
}

/// Shape of a generated ground-truth dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDatasetConfig {
    pub seed: u64,
    pub images: usize,
    pub class_names: Vec<String>,
    /// Inclusive range of distinct classes per image.
    pub classes_per_image: (usize, usize),
    /// Inclusive range of instances per present class.
    pub instances_per_class: (usize, usize),
    pub width: u32,
    pub height: u32,
}

impl Default for SyntheticDatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            images: 50,
            class_names: ["cat", "dog", "person", "car", "bird"].map(String::from).to_vec(),
            classes_per_image: (1, 2),
            instances_per_class: (1, 1),
            width: 500,
            height: 375,
        }
    }
}

const GRID_COLS: usize = 4;
const GRID_ROWS: usize = 3;

/// Generate integer-coordinate ground truth. Each object occupies its own cell
/// of a 4x3 grid, so at most 12 objects fit in one image.
pub fn synthetic_dataset(cfg: &SyntheticDatasetConfig) -> Vec<ImageAnnotation<f64>> {
    assert!(!cfg.class_names.is_empty(), "need at least one class");
    let (cmin, cmax) = cfg.classes_per_image;
    let (imin, imax) = cfg.instances_per_class;
    assert!(1 <= cmin && cmin <= cmax && cmax <= cfg.class_names.len());
    assert!(1 <= imin && imin <= imax && cmax * imax <= GRID_COLS * GRID_ROWS);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cell_w = cfg.width as f64 / GRID_COLS as f64;
    let cell_h = cfg.height as f64 / GRID_ROWS as f64;
    (0..cfg.images)
        .map(|i| {
            let mut ann = ImageAnnotation::new(format!("{:06}", i + 1), cfg.width, cfg.height);
            let mut classes: Vec<usize> = (0..cfg.class_names.len()).collect();
            let n_classes = rng.random_range(cmin..=cmax);
            for slot in 0..n_classes {
                let pick = rng.random_range(slot..classes.len());
                classes.swap(slot, pick);
            }
            let mut cells: Vec<usize> = (0..GRID_COLS * GRID_ROWS).collect();
            let mut next_cell = 0;
            for &c in &classes[..n_classes] {
                for _ in 0..rng.random_range(imin..=imax) {
                    let pick = rng.random_range(next_cell..cells.len());
                    cells.swap(next_cell, pick);
                    let cell = cells[next_cell];
                    next_cell += 1;
                    let (col, row) = ((cell % GRID_COLS) as f64, (cell / GRID_COLS) as f64);
                    let bw = (cell_w * rng.random_range(0.4..0.95)).floor().max(2.0);
                    let bh = (cell_h * rng.random_range(0.4..0.95)).floor().max(2.0);
                    let x0 = (col * cell_w + (cell_w - bw) * rng.random::<f64>()).floor();
                    let y0 = (row * cell_h + (cell_h - bh) * rng.random::<f64>()).floor();
                    let bbox = BBox::new(x0, y0, x0 + bw, y0 + bh).expect("positive size");
                    ann.objects.push(AnnotatedObject::new(cfg.class_names[c].clone(), bbox));
                }
            }
            ann
        })
        .collect()
}
