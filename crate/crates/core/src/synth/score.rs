use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{SceneGroundTruth, SynthError};
use crate::geometry::Rotation;
use crate::recon::Reconstruction;
use crate::trajectory::Trajectory;
use crate::{Point3, RigidTransform, Vec3};

/// Trajectory accuracy against a ground-truth scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreReport {
    /// Point RMSE over all (frame, point) pairs after gauge alignment.
    pub rmse: f64,
    pub per_frame: Vec<FrameScore>,
    /// Length of the true object centroid path.
    pub object_path_length: f64,
    /// `rmse / object_path_length` when the path is non-degenerate.
    pub rmse_fraction_of_path: Option<f64>,
    /// Row-major rotation and translation of the alignment map.
    pub alignment_rotation: [f64; 9],
    pub alignment_translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame_index: usize,
    pub rmse: f64,
    pub points: usize,
}

/// Least-squares rigid registration (Kabsch): the rotation and translation
/// minimizing sum |R*source + t - target|^2. No scale component: the
/// stereo baseline fixes scale, and scoring must not mask scale errors.
pub fn rigid_align(source: &[Point3], target: &[Point3]) -> RigidTransform {
    assert_eq!(source.len(), target.len());
    assert!(source.len() >= 3, "rigid alignment needs at least 3 correspondences");
    let n = source.len() as f64;
    let source_mean: Vec3 = source.iter().map(|p| p.coords).sum::<Vec3>() / n;
    let target_mean: Vec3 = target.iter().map(|p| p.coords).sum::<Vec3>() / n;
    let mut h = Matrix3::<f64>::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (t.coords - target_mean) * (s.coords - source_mean).transpose();
    }
    let rotation = Rotation::from_matrix_nearest(&h);
    let translation = target_mean - rotation.apply(&source_mean);
    RigidTransform::new(rotation, translation)
}

/// Scores a reconstructed trajectory of `scene.objects[object_index]`.
///
/// The gauge of the estimate is removed by rigidly aligning the refined
/// background camera centers to the true rig camera centers; the aligned
/// per-frame object points are then compared against ground truth.
pub fn score_trajectory(
    estimated: &Trajectory,
    background: &Reconstruction,
    scene: &SceneGroundTruth,
    object_index: usize,
) -> Result<ScoreReport, SynthError> {
    let object = scene
        .objects
        .get(object_index)
        .ok_or_else(|| SynthError::FrameMismatch(format!("scene has no object {object_index}")))?;
    if estimated.frames.is_empty() {
        return Err(SynthError::FrameMismatch("trajectory is empty".to_string()));
    }
    for frame in &estimated.frames {
        if frame.frame_index >= scene.frames() {
            return Err(SynthError::FrameMismatch(format!(
                "trajectory frame {} outside scene (0..{})",
                frame.frame_index,
                scene.frames()
            )));
        }
    }

    // Gauge alignment over background camera centers.
    let mut est_centers = Vec::new();
    let mut true_centers = Vec::new();
    for cam in &background.cameras {
        if cam.frame_index < scene.frames() {
            est_centers.push(cam.pose.center);
            true_centers.push(Point3::from(scene.pose(cam.frame_index, cam.side).center));
        }
    }
    if est_centers.len() < 3 {
        return Err(SynthError::FrameMismatch(
            "background reconstruction has fewer than 3 cameras inside the scene".to_string(),
        ));
    }
    let alignment = rigid_align(&est_centers, &true_centers);

    let mut total_sq = 0.0;
    let mut total_n = 0usize;
    let mut per_frame = Vec::with_capacity(estimated.frames.len());
    for frame in &estimated.frames {
        let mut frame_sq = 0.0;
        let mut frame_n = 0usize;
        for (point_id, position) in &frame.points {
            let j = *point_id as usize;
            if j >= object.points.len() {
                return Err(SynthError::FrameMismatch(format!(
                    "trajectory point id {point_id} outside object (0..{})",
                    object.points.len()
                )));
            }
            let truth = object.world_point(j, frame.frame_index);
            let aligned = alignment.apply(position);
            frame_sq += (aligned - truth).norm_squared();
            frame_n += 1;
        }
        if frame_n == 0 {
            return Err(SynthError::FrameMismatch(format!(
                "trajectory frame {} carries no points",
                frame.frame_index
            )));
        }
        per_frame.push(FrameScore {
            frame_index: frame.frame_index,
            rmse: (frame_sq / frame_n as f64).sqrt(),
            points: frame_n,
        });
        total_sq += frame_sq;
        total_n += frame_n;
    }

    let rmse = (total_sq / total_n as f64).sqrt();
    let object_path_length = object.path_length();
    let m = alignment.rotation.matrix();
    Ok(ScoreReport {
        rmse,
        per_frame,
        object_path_length,
        rmse_fraction_of_path: (object_path_length > 1e-12).then(|| rmse / object_path_length),
        alignment_rotation: [
            m[(0, 0)], m[(0, 1)], m[(0, 2)],
            m[(1, 0)], m[(1, 1)], m[(1, 2)],
            m[(2, 0)], m[(2, 1)], m[(2, 2)],
        ],
        alignment_translation: alignment.translation.into(),
    })
}
