//! Axis-aligned boxes and intersection-over-union.
//!
//! Coordinates follow the continuous-geometry convention: a box spans
//! `[xmin, xmax] x [ymin, ymax]` and has area `(xmax - xmin) * (ymax - ymin)`.
//! No inclusive-pixel `+1` correction is applied anywhere.

use std::fmt;

use thiserror::Error;

use crate::scalar::{self, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("box coordinate is not finite")]
    NonFinite,
    #[error("degenerate box: xmin={xmin} xmax={xmax} ymin={ymin} ymax={ymax}")]
    Degenerate {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
}

/// Axis-aligned box with strictly positive width and height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T = f64> {
    xmin: T,
    ymin: T,
    xmax: T,
    ymax: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(xmin: T, ymin: T, xmax: T, ymax: T) -> Result<Self, GeometryError> {
        if ![xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite_value()) {
            return Err(GeometryError::NonFinite);
        }
        if !(xmin < xmax && ymin < ymax) {
            return Err(GeometryError::Degenerate {
                xmin: xmin.to_f64_lossy(),
                ymin: ymin.to_f64_lossy(),
                xmax: xmax.to_f64_lossy(),
                ymax: ymax.to_f64_lossy(),
            });
        }
        Ok(Self {
            xmin,
            ymin,
            xmax,
            ymax,
        })
    }

    pub fn xmin(&self) -> T {
        self.xmin
    }

    pub fn ymin(&self) -> T {
        self.ymin
    }

    pub fn xmax(&self) -> T {
        self.xmax
    }

    pub fn ymax(&self) -> T {
        self.ymax
    }

    pub fn width(&self) -> T {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> T {
        self.ymax - self.ymin
    }

    pub fn corners(&self) -> [T; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn intersection_area(&self, other: &Self) -> T {
        let w = scalar::min(self.xmax, other.xmax) - scalar::max(self.xmin, other.xmin);
        let h = scalar::min(self.ymax, other.ymax) - scalar::max(self.ymin, other.ymin);
        scalar::max(T::zero(), w) * scalar::max(T::zero(), h)
    }

    /// Intersection over union in `[0, 1]`; exactly one for identical boxes.
    pub fn iou(&self, other: &Self) -> T {
        if self == other {
            return T::one();
        }
        let inter = self.intersection_area(other);
        if inter == T::zero() {
            return T::zero();
        }
        inter / (self.area() + other.area() - inter)
    }

    pub fn translate(&self, dx: T, dy: T) -> Result<Self, GeometryError> {
        Self::new(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)
    }

    /// Clamp into `[0, width] x [0, height]`. `None` when clamping leaves no area.
    pub fn clamp_to(&self, width: T, height: T) -> Option<Self> {
        let c = |v: T, hi: T| scalar::min(scalar::max(v, T::zero()), hi);
        Self::new(
            c(self.xmin, width),
            c(self.ymin, height),
            c(self.xmax, width),
            c(self.ymax, height),
        )
        .ok()
    }

    pub fn within(&self, width: T, height: T) -> bool {
        self.xmin >= T::zero() && self.ymin >= T::zero() && self.xmax <= width && self.ymax <= height
    }
}

pub fn area<T: Scalar>(b: &BBox<T>) -> T {
    b.area()
}

pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    a.iou(b)
}

impl<T: Scalar> fmt::Display for BBox<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.xmin, self.ymin, self.xmax, self.ymax)
    }
}
