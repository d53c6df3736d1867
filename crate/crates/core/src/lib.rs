//! Building blocks for a two-phase weakly supervised detection pipeline:
//! box geometry, VOC annotation I/O, 11-point AP evaluation, top-k pseudo
//! ground-truth mining and refinement, proposal clustering, loss kernels, and
//! a seeded stand-in detector.
//!
//! Most of the core is generic over [`Scalar`] (`f32`, `f64`, or the exact
//! [`Rational`]); the aliases below fix the common instantiations.

pub mod clustering;
pub mod evaluation;
pub mod geometry;
pub mod loss;
pub mod loss_check;
pub mod mining;
pub mod parallel;
pub mod refinement;
pub mod scalar;
pub mod sim_detector;
pub mod voc_io;

pub use clustering::{assign_clusters, build_graph, select_centers, Cluster, ClusterAssignment, ProposalGraph, ScoredProposal};
pub use evaluation::{ap_11point, evaluate, evaluate_with_jobs, pr_curve, EvalReport, Outcome, PrCurve};
pub use geometry::{BBox, GeometryError};
pub use loss::{frcnn_loss, pcl_bag_loss, rpn_loss, smooth_l1, LossError};
pub use mining::{mine_dataset, mine_image, MiningConfig, PseudoAnnotation};
pub use refinement::{run_refinement_loop, RefinementPolicy, TimingRule, UpdateRule};
pub use scalar::{Rational, Scalar};
pub use sim_detector::{Detector, DetectorOracle, OracleConfig, SyntheticDatasetConfig};
pub use voc_io::{Detection, ImageAnnotation, ImageLevelLabels, VocError};

pub type BBox64 = BBox<f64>;
pub type BBox32 = BBox<f32>;
pub type BBoxQ = BBox<Rational>;
pub type Detection64 = Detection<f64>;
pub type Detection32 = Detection<f32>;
pub type DetectionQ = Detection<Rational>;
pub type ImageAnnotation64 = ImageAnnotation<f64>;
pub type ImageAnnotation32 = ImageAnnotation<f32>;
pub type ImageAnnotationQ = ImageAnnotation<Rational>;
pub type EvalReport64 = EvalReport<f64>;
pub type EvalReportQ = EvalReport<Rational>;
