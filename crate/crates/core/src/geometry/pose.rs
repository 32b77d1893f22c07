use nalgebra::{Point3, Vector3};

use super::Rotation;
use crate::Scalar;

/// Camera pose: world-to-camera rotation plus the camera center in world
/// coordinates. A world point `p` maps to camera coordinates `R * (p - c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose<S: Scalar> {
    pub rotation: Rotation<S>,
    pub center: Point3<S>,
}

impl<S: Scalar> CameraPose<S> {
    pub fn new(rotation: Rotation<S>, center: Point3<S>) -> Self {
        CameraPose { rotation, center }
    }

    pub fn identity() -> Self {
        CameraPose {
            rotation: Rotation::identity(),
            center: Point3::origin(),
        }
    }

    /// World point to camera coordinates: `R * (p - c)`.
    pub fn world_to_camera(&self, p: &Point3<S>) -> Point3<S> {
        Point3::from(self.rotation.apply(&(p - self.center)))
    }

    /// Camera point back to world coordinates: `c + R^T * p_cam`.
    ///
    /// Exact inverse of [`CameraPose::world_to_camera`].
    pub fn camera_to_world(&self, p_cam: &Point3<S>) -> Point3<S> {
        self.center + self.rotation.apply_inverse(&p_cam.coords)
    }

    /// Applies a 6-parameter local increment: `R <- exp(omega) * R`,
    /// `c <- c + delta_c`. Used by the optimizer to stay on the manifold.
    pub fn retract(&self, omega: &Vector3<S>, delta_c: &Vector3<S>) -> Self {
        CameraPose {
            rotation: Rotation::exp(omega).compose(&self.rotation),
            center: self.center + delta_c,
        }
    }

    /// The camera +x axis expressed in world coordinates (first row of `R`).
    pub fn x_axis_world(&self) -> Vector3<S> {
        self.rotation.matrix().row(0).transpose()
    }
}

/// Rigid map `p -> R * p + t` between two coordinate frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<S: Scalar> {
    pub rotation: Rotation<S>,
    pub translation: Vector3<S>,
}

impl<S: Scalar> RigidTransform<S> {
    pub fn new(rotation: Rotation<S>, translation: Vector3<S>) -> Self {
        RigidTransform { rotation, translation }
    }

    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, p: &Point3<S>) -> Point3<S> {
        Point3::from(self.rotation.apply(&p.coords) + self.translation)
    }

    /// `self` applied after `other`.
    pub fn compose(&self, other: &Self) -> Self {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = self.rotation.transpose();
        RigidTransform {
            rotation: rot_inv,
            translation: -rot_inv.apply(&self.translation),
        }
    }
}
