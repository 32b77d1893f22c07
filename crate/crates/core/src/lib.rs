//! Reconstruction of 3D object motion trajectories from stereo video.
//!
//! The pipeline tracks object instance masks across a rectified stereo
//! sequence, refines object and background structure-from-motion results
//! under a rigid stereo-rig constraint, resolves the relative scale via the
//! stereo baseline and composes per-frame object point clouds in the
//! background coordinate frame.
//!
//! Modules follow the pipeline stages:
//!
//! * [`geometry`] — rigid transforms, pinhole projection, triangulation.
//! * [`tracking`] — flow-warped mask prediction, overlap affinity and
//!   Kuhn-Munkres assignment for temporal and stereo association.
//! * [`recon`] — reconstruction data model and JSON file format.
//! * [`refine`] — stereo feature pairing, baseline scale estimation and
//!   Levenberg-Marquardt refinement with a hard rig constraint.
//! * [`trajectory`] — per-frame composition of object points into the
//!   background frame, CSV/PLY export.
//! * [`synth`] — deterministic synthetic scenes with ground truth for
//!   end-to-end verification.
//!
//! Coordinate conventions: camera looks down +z, image x right, image y
//! down. A camera pose maps a world point `p` to camera coordinates as
//! `R * (p - c)`.
//!
//! The geometry core is generic over the scalar type; the pipeline itself
//! runs on [`Real`] (`f64`), see the aliases at the crate root.

pub mod geometry;
pub mod recon;
pub mod refine;
pub mod synth;
pub mod tracking;
pub mod trajectory;

/// Floating-point scalar usable by the geometry core.
pub trait Scalar: nalgebra::RealField + Copy + num_traits::FromPrimitive {}
impl<T> Scalar for T where T: nalgebra::RealField + Copy + num_traits::FromPrimitive {}

/// Scalar type the pipeline runs on.
pub type Real = f64;

/// 3D point in a named coordinate frame, scene units.
pub type Point3 = nalgebra::Point3<Real>;
/// 2D pixel position, x right, y down.
pub type Pixel = nalgebra::Point2<Real>;
/// 3D displacement.
pub type Vec3 = nalgebra::Vector3<Real>;
/// 2D displacement, pixels.
pub type Vec2 = nalgebra::Vector2<Real>;

/// World-to-camera axis alignment, crate-default scalar.
pub type Rotation = geometry::Rotation<Real>;
/// Camera pose (rotation + center), crate-default scalar.
pub type CameraPose = geometry::CameraPose<Real>;
/// Pinhole intrinsics, crate-default scalar.
pub type PinholeIntrinsics = geometry::PinholeIntrinsics<Real>;
/// Rigid map `p -> R*p + t`, crate-default scalar.
pub type RigidTransform = geometry::RigidTransform<Real>;
