//! Composition of object and background reconstructions into the per-frame
//! object trajectory, expressed in the background coordinate frame, plus
//! CSV and PLY export.
//!
//! For every paired frame `i` the object points are first converted into
//! the camera frame, `o_j_i = R_i_obj * (o_j - c_i_obj)`, then carried into
//! the background frame through that frame's background camera,
//! `o_j_i_bg = c_i_bg + R_i_bg^T * o_j_i`. Both steps use the left cameras.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::recon::{CameraId, FramePair, PointId, Reconstruction};
use crate::refine::median_baseline;
use crate::{Point3, RigidTransform};

/// Relative disagreement between the two reconstructions' median baselines
/// beyond which composition refuses to run; catches skipped refinement.
pub const SCALE_MISMATCH_TOLERANCE: f64 = 0.01;

/// Per-frame object point clouds in the background frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// Ordered by frame index.
    pub frames: Vec<TrajectoryFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryFrame {
    pub frame_index: usize,
    pub points: Vec<(PointId, Point3)>,
    /// Derived rigid map from the object frame into the background frame.
    /// `None` for trajectories read back from CSV, which stores only
    /// points.
    pub object_pose: Option<RigidTransform>,
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("camera id {0} does not exist in the reconstruction")]
    UnknownCamera(CameraId),
    #[error("median baselines differ by more than {}: object {object}, background {background}", SCALE_MISMATCH_TOLERANCE)]
    ScaleMismatch { object: f64, background: f64 },
    #[error("no frame pairs to compose")]
    NoFrames,
    #[error("{path}: {message}")]
    ParseError { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Object points converted into the camera frame of the given camera.
pub fn object_points_in_camera(
    obj: &Reconstruction,
    camera_id: CameraId,
) -> Result<Vec<(PointId, Point3)>, TrajectoryError> {
    let camera = obj.camera(camera_id).ok_or(TrajectoryError::UnknownCamera(camera_id))?;
    Ok(obj
        .points
        .iter()
        .map(|p| (p.point_id, camera.pose.world_to_camera(&p.position)))
        .collect())
}

/// Composes the trajectory over the surviving frame pairs. Both
/// reconstructions must already be refined to the same nominal baseline;
/// a relative disagreement above 1% is rejected as a scale mismatch.
pub fn compose_trajectory(
    obj: &Reconstruction,
    bg: &Reconstruction,
    pairs: &[FramePair],
) -> Result<Trajectory, TrajectoryError> {
    if pairs.is_empty() {
        return Err(TrajectoryError::NoFrames);
    }
    let obj_baseline = median_baseline(obj).map_err(|_| TrajectoryError::NoFrames)?;
    let bg_baseline = median_baseline(bg).map_err(|_| TrajectoryError::NoFrames)?;
    let relative = (obj_baseline - bg_baseline).abs() / obj_baseline.max(bg_baseline);
    if relative > SCALE_MISMATCH_TOLERANCE {
        return Err(TrajectoryError::ScaleMismatch { object: obj_baseline, background: bg_baseline });
    }

    let mut frames = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let obj_cam = obj
            .camera(pair.object_left)
            .ok_or(TrajectoryError::UnknownCamera(pair.object_left))?;
        let bg_cam = bg
            .camera(pair.background_left)
            .ok_or(TrajectoryError::UnknownCamera(pair.background_left))?;

        let points = obj
            .points
            .iter()
            .map(|p| {
                let in_camera = obj_cam.pose.world_to_camera(&p.position);
                (p.point_id, bg_cam.pose.camera_to_world(&in_camera))
            })
            .collect();

        // Object-to-background map: the frame's rigid composition of the
        // object world-to-camera with the background camera-to-world.
        let rotation = bg_cam.pose.rotation.transpose().compose(&obj_cam.pose.rotation);
        let translation = bg_cam.pose.center.coords - rotation.apply(&obj_cam.pose.center.coords);
        frames.push(TrajectoryFrame {
            frame_index: pair.frame_index,
            points,
            object_pose: Some(RigidTransform::new(rotation, translation)),
        });
    }
    frames.sort_by_key(|f| f.frame_index);
    Ok(Trajectory { frames })
}

/// Writes `frame,point_id,x,y,z` rows; floats use the shortest
/// representation that round-trips exactly.
pub fn write_csv(trajectory: &Trajectory, path: &Path) -> Result<(), TrajectoryError> {
    let io_err = |source| TrajectoryError::Io { path: path.display().to_string(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(w, "frame,point_id,x,y,z").map_err(io_err)?;
    for frame in &trajectory.frames {
        for (point_id, p) in &frame.points {
            writeln!(w, "{},{},{},{},{}", frame.frame_index, point_id, p.x, p.y, p.z).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

pub fn read_csv(path: &Path) -> Result<Trajectory, TrajectoryError> {
    let io_err = |source| TrajectoryError::Io { path: path.display().to_string(), source };
    let parse_err = |line: usize, message: String| TrajectoryError::ParseError {
        path: path.display().to_string(),
        message: format!("line {line}: {message}"),
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut frames: Vec<TrajectoryFrame> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if idx == 0 {
            if line.trim() != "frame,point_id,x,y,z" {
                return Err(parse_err(1, "unexpected header".to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(idx + 1, format!("expected 5 fields, got {}", fields.len())));
        }
        let frame_index: usize = fields[0].parse().map_err(|_| parse_err(idx + 1, "bad frame".into()))?;
        let point_id: PointId = fields[1].parse().map_err(|_| parse_err(idx + 1, "bad point id".into()))?;
        let coords: Vec<f64> = fields[2..5]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(idx + 1, "bad coordinate".into()))?;
        if !coords.iter().all(|v| v.is_finite()) {
            return Err(parse_err(idx + 1, "non-finite coordinate".into()));
        }
        let point = (point_id, Point3::new(coords[0], coords[1], coords[2]));
        match frames.last_mut() {
            Some(last) if last.frame_index == frame_index => last.points.push(point),
            _ => frames.push(TrajectoryFrame { frame_index, points: vec![point], object_pose: None }),
        }
    }
    if frames.is_empty() {
        return Err(TrajectoryError::NoFrames);
    }
    frames.sort_by_key(|f| f.frame_index);
    Ok(Trajectory { frames })
}

/// Binary little-endian PLY, one vertex per frame-point, colored by frame
/// index from blue (first) to red (last) for top/side-view inspection.
pub fn write_ply(trajectory: &Trajectory, path: &Path) -> Result<(), TrajectoryError> {
    let io_err = |source| TrajectoryError::Io { path: path.display().to_string(), source };
    let count: usize = trajectory.frames.iter().map(|f| f.points.len()).sum();
    let last = trajectory.frames.last().map_or(0, |f| f.frame_index).max(1);
    let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {count}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n"
    )
    .map_err(io_err)?;
    for frame in &trajectory.frames {
        let fraction = frame.frame_index as f64 / last as f64;
        let red = (fraction * 255.0).round() as u8;
        let blue = 255 - red;
        for (_, p) in &frame.points {
            for coord in [p.x as f32, p.y as f32, p.z as f32] {
                w.write_all(&coord.to_le_bytes()).map_err(io_err)?;
            }
            w.write_all(&[red, 64, blue]).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}
