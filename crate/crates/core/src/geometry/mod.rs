//! Rigid-body transforms, pinhole projection and triangulation primitives.
//!
//! Everything here is generic over the scalar type and pure; the types are
//! immutable after construction and safe to share across threads.
//!
//! Convention: a [`CameraPose`] holds a world-to-camera rotation `R` and the
//! camera center `c` in world coordinates, so a world point `p` maps to
//! camera coordinates as `R * (p - c)`. The camera looks down +z, image x
//! points right and image y points down.

mod pose;
mod projection;
mod rotation;

pub use pose::{CameraPose, RigidTransform};
pub use projection::{triangulate_two_view, PinholeIntrinsics};
pub use rotation::Rotation;

use thiserror::Error;

/// Minimum camera-frame depth accepted by projection, scene units.
pub const DEPTH_EPSILON: f64 = 1e-6;
/// Minimum ray angle accepted by two-view triangulation, radians.
pub const RAY_ANGLE_EPSILON: f64 = 1e-4;
/// Tolerance on `R^T R = I` and `det R = 1` for a valid rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth} <= {})", DEPTH_EPSILON)]
    PointBehindCamera { depth: f64 },
    #[error("triangulation rays are near parallel (angle {angle} rad <= {})", RAY_ANGLE_EPSILON)]
    DegenerateBaseline { angle: f64 },
    #[error("matrix is not a rotation (orthogonality error {orthogonality}, determinant {determinant})")]
    NotARotation { orthogonality: f64, determinant: f64 },
}

/// Converts an `f64` constant into the working scalar.
pub(crate) fn scalar<S: crate::Scalar>(x: f64) -> S {
    S::from_f64(x).expect("f64 constant must convert into the scalar type")
}
