//! Annotation and detection records plus their on-disk formats.
//!
//! Three formats live here:
//!
//! * PASCAL-VOC style XML annotations (`xml`), used for ground truth and for
//!   mined pseudo ground truth alike.
//! * A line-based detection interchange format (`detections`):
//!   `image_id class score xmin ymin xmax ymax`, one record per line.
//! * An image-level label file (`labels`): `image_id class1 class2 ...`.

mod detections;
mod labels;
mod xml;

use std::collections::BTreeSet;

use thiserror::Error;

use crate::geometry::{BBox, GeometryError};
use crate::scalar::Scalar;

pub use detections::{parse_detections, write_detections};
pub use labels::{parse_labels, write_labels};
pub use xml::{parse_annotation, parse_annotation_bytes, parse_annotation_with_warnings, write_annotation, ClampWarning};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VocError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("missing required tag <{tag}>")]
    MissingTag { tag: String },
    #[error("invalid value {value:?} in <{tag}>")]
    InvalidValue { tag: String, value: String },
    #[error("object {index}: {source}")]
    InvalidObject {
        index: usize,
        #[source]
        source: GeometryError,
    },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: {message}")]
    Data { line: usize, message: String },
    #[error("empty image id")]
    EmptyImageId,
}

impl VocError {
    /// Structural/format problems, as opposed to well-formed input with bad values.
    pub fn is_syntax(&self) -> bool {
        matches!(self, VocError::Xml { .. } | VocError::Syntax { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedObject<T = f64> {
    pub class_name: String,
    pub bbox: BBox<T>,
}

impl<T: Scalar> AnnotatedObject<T> {
    pub fn new(class_name: impl Into<String>, bbox: BBox<T>) -> Self {
        Self {
            class_name: class_name.into(),
            bbox,
        }
    }
}

/// Per-image set of labelled boxes. Serves as ground truth or pseudo ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageAnnotation<T = f64> {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<AnnotatedObject<T>>,
}

impl<T: Scalar> ImageAnnotation<T> {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            objects: Vec::new(),
        }
    }

    pub fn with_object(mut self, class_name: impl Into<String>, bbox: BBox<T>) -> Self {
        self.objects.push(AnnotatedObject::new(class_name, bbox));
        self
    }

    /// Boxes of one class, in object order.
    pub fn boxes_of<'a>(&'a self, class_name: &'a str) -> impl Iterator<Item = BBox<T>> + 'a {
        self.objects
            .iter()
            .filter(move |o| o.class_name == class_name)
            .map(|o| o.bbox)
    }
}

/// The classes present in one image, with boxes discarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageLevelLabels {
    pub image_id: String,
    pub classes: BTreeSet<String>,
    /// Image size when the labels came from an annotation; used when writing mined XML.
    pub size: Option<(u32, u32)>,
}

impl ImageLevelLabels {
    pub fn new<I, S>(image_id: impl Into<String>, classes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            image_id: image_id.into(),
            classes: classes.into_iter().map(Into::into).collect(),
            size: None,
        }
    }

    pub fn contains(&self, class_name: &str) -> bool {
        self.classes.contains(class_name)
    }
}

pub fn image_level_labels<T: Scalar>(a: &ImageAnnotation<T>) -> ImageLevelLabels {
    ImageLevelLabels {
        image_id: a.image_id.clone(),
        classes: a.objects.iter().map(|o| o.class_name.clone()).collect(),
        size: Some((a.width, a.height)),
    }
}

/// One scored box from a detector.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection<T = f64> {
    pub image_id: String,
    pub class_name: String,
    pub score: T,
    pub bbox: BBox<T>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("detection score {0} outside [0, 1]")]
pub struct ScoreOutOfRange(pub f64);

impl<T: Scalar> Detection<T> {
    pub fn new(
        image_id: impl Into<String>,
        class_name: impl Into<String>,
        score: T,
        bbox: BBox<T>,
    ) -> Result<Self, ScoreOutOfRange> {
        if !(score.is_finite_value() && score >= T::zero() && score <= T::one()) {
            return Err(ScoreOutOfRange(score.to_f64_lossy()));
        }
        Ok(Self {
            image_id: image_id.into(),
            class_name: class_name.into(),
            score,
            bbox,
        })
    }
}
