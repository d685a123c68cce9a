//! Vanishing-point labelling and evaluation from lane annotations.
//!
//! The pipeline reads lane polylines (CULane text files or lane-instance
//! masks), fits `x = f(y)` polynomials per lane, intersects every pair of
//! fitted curves and aggregates the crossings into a vanishing-point label.
//! Labels feed Gaussian heatmap targets and vertical-shift augmentation for
//! training a heatmap detector, and the [`eval`] module scores detector
//! output (direct or lane-fitting based) against those labels.

pub mod augment;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod heatmap;
pub mod lane_ingest;
pub mod polyfit;
pub mod roots;
pub mod synth;
pub mod vp_labeler;

pub use error::{Error, Result};
pub use geometry::{ImageGeometry, Point};
pub use lane_ingest::{FrameAnnotation, LanePolyline, SegMask};
pub use polyfit::{FitMethod, PolyFit};
pub use vp_labeler::{Aggregation, IntersectionSet, LabelFilter, VpLabel};
