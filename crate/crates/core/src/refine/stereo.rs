use std::collections::BTreeMap;

use super::RefineError;
use crate::recon::{CameraId, PointId, Reconstruction};
use crate::tracking::Side;
use crate::{Pixel, Point3};

/// A paired left/right feature observation of one point at one time step.
/// Built only from pairs with |y_left - y_right| below the tolerance; the
/// shared `v` is the mean of the two y coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoObservation {
    pub point_id: PointId,
    pub frame_index: usize,
    pub u_left: f64,
    pub u_right: f64,
    pub v: f64,
}

/// An observation that found no stereo partner; enters the problem as a
/// plain 2D reprojection residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonoObservation {
    pub point_id: PointId,
    pub camera_id: CameraId,
    pub pixel: Pixel,
}

/// Rectified stereo rig: pure x-offset between the cameras, identity
/// relative rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigModel {
    pub baseline: f64,
}

impl RigModel {
    pub fn new(baseline: f64) -> Result<Self, RefineError> {
        if baseline > 0.0 && baseline.is_finite() {
            Ok(RigModel { baseline })
        } else {
            Err(RefineError::NonPositiveScale(baseline))
        }
    }
}

/// Searches every point for left/right observation pairs of the same frame.
/// Pairs within the y tolerance become [`StereoObservation`]s with averaged
/// y; everything else stays mono. Each observation is used at most once.
pub fn pair_stereo_features(
    recon: &Reconstruction,
    y_tolerance: f64,
) -> (Vec<StereoObservation>, Vec<MonoObservation>) {
    let camera_slot: BTreeMap<CameraId, (usize, Side)> = recon
        .cameras
        .iter()
        .map(|c| (c.camera_id, (c.frame_index, c.side)))
        .collect();

    let mut stereo = Vec::new();
    let mut mono = Vec::new();
    for point in &recon.points {
        // (frame -> (camera_id, pixel)) per side, first observation wins.
        let mut left: BTreeMap<usize, (CameraId, Pixel)> = BTreeMap::new();
        let mut right: BTreeMap<usize, (CameraId, Pixel)> = BTreeMap::new();
        for (camera_id, pixel) in &point.observations {
            let (frame, side) = camera_slot[camera_id];
            let bucket = match side {
                Side::Left => &mut left,
                Side::Right => &mut right,
            };
            bucket.entry(frame).or_insert((*camera_id, *pixel));
        }
        for (&frame, &(left_id, left_pix)) in &left {
            match right.get(&frame) {
                Some(&(_, right_pix)) if (left_pix.y - right_pix.y).abs() < y_tolerance => {
                    stereo.push(StereoObservation {
                        point_id: point.point_id,
                        frame_index: frame,
                        u_left: left_pix.x,
                        u_right: right_pix.x,
                        v: (left_pix.y + right_pix.y) / 2.0,
                    });
                }
                Some(&(right_id, right_pix)) => {
                    mono.push(MonoObservation { point_id: point.point_id, camera_id: left_id, pixel: left_pix });
                    mono.push(MonoObservation { point_id: point.point_id, camera_id: right_id, pixel: right_pix });
                }
                None => {
                    mono.push(MonoObservation { point_id: point.point_id, camera_id: left_id, pixel: left_pix });
                }
            }
        }
        for (&frame, &(right_id, right_pix)) in &right {
            if !left.contains_key(&frame) {
                mono.push(MonoObservation { point_id: point.point_id, camera_id: right_id, pixel: right_pix });
            }
        }
    }
    (stereo, mono)
}

/// Per-frame stereo baselines |c_left - c_right|, ascending frame order.
pub fn per_frame_baselines(recon: &Reconstruction) -> Vec<(usize, f64)> {
    recon
        .stereo_frames()
        .into_iter()
        .map(|frame| {
            let l = recon.camera_at(frame, Side::Left).expect("stereo frame has left");
            let r = recon.camera_at(frame, Side::Right).expect("stereo frame has right");
            (frame, (l.pose.center - r.pose.center).norm())
        })
        .collect()
}

/// Median of the per-frame stereo baselines.
pub fn median_baseline(recon: &Reconstruction) -> Result<f64, RefineError> {
    let mut baselines: Vec<f64> = per_frame_baselines(recon).into_iter().map(|(_, b)| b).collect();
    if baselines.is_empty() {
        return Err(RefineError::NoStereoFrames);
    }
    baselines.sort_by(|a, b| a.partial_cmp(b).expect("baselines are finite"));
    let n = baselines.len();
    Ok(if n % 2 == 1 {
        baselines[n / 2]
    } else {
        (baselines[n / 2 - 1] + baselines[n / 2]) / 2.0
    })
}

/// Scale factor that brings the reconstruction's median stereo baseline to
/// the nominal one. The median keeps single incorrectly registered cameras
/// from corrupting the estimate.
pub fn estimate_scale(recon: &Reconstruction, nominal_baseline: f64) -> Result<f64, RefineError> {
    Ok(nominal_baseline / median_baseline(recon)?)
}

/// Multiplies all camera centers and point positions by `s`. Rotations,
/// intrinsics and observations are untouched, so reprojection residuals are
/// invariant.
pub fn apply_scale(recon: &Reconstruction, s: f64) -> Result<Reconstruction, RefineError> {
    if !(s > 0.0) || !s.is_finite() {
        return Err(RefineError::NonPositiveScale(s));
    }
    let mut scaled = recon.clone();
    for cam in &mut scaled.cameras {
        cam.pose.center = Point3::from(cam.pose.center.coords * s);
    }
    for point in &mut scaled.points {
        point.position = Point3::from(point.position.coords * s);
    }
    Ok(scaled)
}
