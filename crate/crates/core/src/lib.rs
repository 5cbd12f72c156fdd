//! Distance-based local polynomial estimation and inference for boundary
//! discontinuity designs.

// NaN-rejecting `!(x > 0.0)` guards are intentional
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bandwidth;
pub mod covariance;
pub mod error;
pub mod estimate;
pub mod geometry;
pub mod inference;
pub mod io;
pub mod kernel;
pub mod locpoly;
pub mod oracle;
pub mod quadrature;
pub mod sample;
pub mod simulation;

pub use bandwidth::BandwidthRule;
pub use covariance::CovarianceSurface;
pub use error::{Error, Result};
pub use estimate::{estimate_grid, FitConfig, GridEstimate, PointEstimate, PointSummary};
pub use geometry::{
    AssignmentRule, AxisSign, Boundary, DistanceMetric, Euclidean, EvalGrid, Point, Polyline, Side,
};
pub use inference::{BandResult, IntervalResult};
pub use kernel::Kernel;
pub use locpoly::{PointFit, SideFit};
pub use sample::Sample;
pub use simulation::{DgpSpec, McConfig, McReport};
