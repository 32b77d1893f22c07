use nalgebra::{Point2, Point3, Vector3};

use super::{scalar, CameraPose, GeometryError, DEPTH_EPSILON, RAY_ANGLE_EPSILON};
use crate::Scalar;

/// Pinhole camera intrinsics, pixels. Focal lengths are positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeIntrinsics<S: Scalar> {
    pub focal_x: S,
    pub focal_y: S,
    pub principal_x: S,
    pub principal_y: S,
}

impl<S: Scalar> PinholeIntrinsics<S> {
    pub fn new(focal_x: S, focal_y: S, principal_x: S, principal_y: S) -> Self {
        PinholeIntrinsics { focal_x, focal_y, principal_x, principal_y }
    }

    /// Projects a camera-frame point: `(fx*x/z + cx, fy*y/z + cy)`.
    pub fn project(&self, p_cam: &Point3<S>) -> Result<Point2<S>, GeometryError> {
        if p_cam.z <= scalar::<S>(DEPTH_EPSILON) {
            return Err(GeometryError::PointBehindCamera {
                depth: p_cam.z.to_subset().unwrap_or(f64::NAN),
            });
        }
        Ok(Point2::new(
            self.focal_x * p_cam.x / p_cam.z + self.principal_x,
            self.focal_y * p_cam.y / p_cam.z + self.principal_y,
        ))
    }

    /// Unit ray direction in camera coordinates through the given pixel.
    pub fn ray_direction(&self, pix: &Point2<S>) -> Vector3<S> {
        Vector3::new(
            (pix.x - self.principal_x) / self.focal_x,
            (pix.y - self.principal_y) / self.focal_y,
            S::one(),
        )
        .normalize()
    }
}

/// Triangulates a point from two views by the midpoint-of-rays method.
///
/// The returned point minimizes the sum of squared distances to both
/// viewing rays. Fails with [`GeometryError::DegenerateBaseline`] when the
/// rays are near parallel.
pub fn triangulate_two_view<S: Scalar>(
    pose_a: &CameraPose<S>,
    pose_b: &CameraPose<S>,
    intr: &PinholeIntrinsics<S>,
    pix_a: &Point2<S>,
    pix_b: &Point2<S>,
) -> Result<Point3<S>, GeometryError> {
    let dir_a = pose_a.rotation.apply_inverse(&intr.ray_direction(pix_a));
    let dir_b = pose_b.rotation.apply_inverse(&intr.ray_direction(pix_b));

    let cos = dir_a.dot(&dir_b).clamp(-S::one(), S::one());
    let angle = cos.acos();
    if angle <= scalar::<S>(RAY_ANGLE_EPSILON) {
        return Err(GeometryError::DegenerateBaseline {
            angle: angle.to_subset().unwrap_or(f64::NAN),
        });
    }

    // Closest points on the two rays; their midpoint is the minimizer.
    let w = pose_a.center - pose_b.center;
    let b = dir_a.dot(&dir_b);
    let d = dir_a.dot(&w);
    let e = dir_b.dot(&w);
    let denom = S::one() - b * b;
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;

    let on_a = pose_a.center + dir_a * s;
    let on_b = pose_b.center + dir_b * t;
    Ok(Point3::from((on_a.coords + on_b.coords) * scalar::<S>(0.5)))
}
