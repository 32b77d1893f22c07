//! Stereo-constraint refinement of a reconstruction.
//!
//! Left/right feature observations of the same point and frame are paired
//! into stereo constraints, the reconstruction is rescaled so its median
//! stereo baseline matches the nominal rig baseline, and a robust nonlinear
//! least-squares problem refines poses and points under a hard rigid-rig
//! constraint: the right camera is always the left camera shifted by the
//! baseline along the rectified x-axis, never a free variable.

mod problem;
mod solver;
mod stereo;

pub use problem::{
    build_problem, derive_right_pose, evaluate_residuals_and_jacobian, Evaluation,
    LeastSquaresProblem, ProblemState, ResidualBlock,
};
pub use solver::{optimize, ConvergenceReason, RefinementReport};
pub use stereo::{
    apply_scale, estimate_scale, median_baseline, pair_stereo_features, per_frame_baselines,
    MonoObservation, RigModel, StereoObservation,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Refinement configuration. Defaults follow the documented design values;
/// `y_tolerance` is the paper's three-pixel rectification bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Maximum |y_left - y_right| for a stereo pairing, pixels.
    pub y_tolerance: f64,
    /// Baseline every reconstruction is rescaled and constrained to.
    pub nominal_baseline: f64,
    /// Huber loss width in pixels; `None` solves the plain quadratic.
    pub huber_width: Option<f64>,
    pub max_iterations: usize,
    /// Relative cost decrease below which the solve terminates.
    pub cost_tolerance: f64,
    /// Gradient max-norm below which the solve terminates.
    pub gradient_tolerance: f64,
    pub initial_lambda: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            y_tolerance: 3.0,
            nominal_baseline: 1.0,
            huber_width: Some(2.0),
            max_iterations: 100,
            cost_tolerance: 1e-9,
            gradient_tolerance: 1e-10,
            initial_lambda: 1e-4,
        }
    }
}

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("no frame has both stereo cameras registered")]
    NoStereoFrames,
    #[error("scale factor must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("problem has no residual blocks")]
    EmptyProblem,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
}
