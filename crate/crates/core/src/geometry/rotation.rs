use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

use super::{scalar, GeometryError, ROTATION_TOLERANCE};
use crate::Scalar;

/// 3x3 rotation matrix, orthonormal with determinant +1.
///
/// Stored as a plain matrix; compositions re-project onto the nearest
/// orthogonal matrix (polar decomposition) so long chains stay on the
/// manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<S: Scalar>(Matrix3<S>);

impl<S: Scalar> Rotation<S> {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates the rotation invariants and wraps the matrix.
    pub fn from_matrix(m: Matrix3<S>) -> Result<Self, GeometryError> {
        let ortho = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        let tol = scalar::<S>(ROTATION_TOLERANCE);
        if ortho > tol || (det - S::one()).abs() > tol {
            return Err(GeometryError::NotARotation {
                orthogonality: ortho.to_subset().unwrap_or(f64::NAN),
                determinant: det.to_subset().unwrap_or(f64::NAN),
            });
        }
        Ok(Rotation(m))
    }

    /// Projects an arbitrary matrix onto the nearest rotation
    /// (polar decomposition via SVD, determinant sign corrected).
    pub fn from_matrix_nearest(m: &Matrix3<S>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd of 3x3 always yields U");
        let v_t = svd.v_t.expect("svd of 3x3 always yields V^T");
        let mut r = u * v_t;
        if r.determinant() < S::zero() {
            let mut flip = Matrix3::identity();
            flip[(2, 2)] = -S::one();
            r = u * flip * v_t;
        }
        Rotation(r)
    }

    pub fn from_axis_angle(axis: &Unit<Vector3<S>>, angle: S) -> Self {
        Rotation(Rotation3::from_axis_angle(axis, angle).into_inner())
    }

    /// Exponential map: rotation by the vector's direction and magnitude.
    pub fn exp(omega: &Vector3<S>) -> Self {
        Rotation(Rotation3::new(*omega).into_inner())
    }

    pub fn matrix(&self) -> &Matrix3<S> {
        &self.0
    }

    /// The inverse rotation.
    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// `self * other`, re-orthonormalized.
    pub fn compose(&self, other: &Self) -> Self {
        Self::from_matrix_nearest(&(self.0 * other.0))
    }

    pub fn apply(&self, v: &Vector3<S>) -> Vector3<S> {
        self.0 * v
    }

    pub fn apply_inverse(&self, v: &Vector3<S>) -> Vector3<S> {
        self.0.transpose() * v
    }

    /// Relative angle between two rotations, radians.
    pub fn angle_to(&self, other: &Self) -> S {
        let rel = self.0.transpose() * other.0;
        let two = scalar::<S>(2.0);
        let cos = ((rel.trace() - S::one()) / two).clamp(-S::one(), S::one());
        cos.acos()
    }

    pub fn orthogonality_error(&self) -> S {
        (self.0.transpose() * self.0 - Matrix3::identity()).norm()
    }
}
