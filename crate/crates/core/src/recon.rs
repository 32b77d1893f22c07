//! Reconstruction data model, JSON file format and object/background
//! camera pairing.
//!
//! A reconstruction holds the cameras and 3D points of one structure-from-
//! motion result, either of an object or of the background. Files use a
//! single JSON document (see `schemas/reconstruction.schema.json`):
//!
//! ```json
//! {
//!   "kind": "object",
//!   "cameras": [
//!     { "id": 0, "frame": 0, "side": "left",
//!       "rotation": [1,0,0, 0,1,0, 0,0,1],
//!       "center": [0,0,0],
//!       "intrinsics": [120.0, 120.0, 80.0, 60.0] }
//!   ],
//!   "points": [
//!     { "id": 0, "xyz": [0.1, 0.2, 5.0],
//!       "observations": [[0, 81.5, 62.25], [1, 77.25, 62.25]] }
//!   ]
//! }
//! ```
//!
//! Rotations are row-major 3x3, intrinsics are `[fx, fy, cx, cy]`,
//! observations are `[camera_id, x, y]` triples. Reconstructions are
//! immutable after load and safe to share across threads.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Rotation;
use crate::tracking::Side;
use crate::{CameraPose, PinholeIntrinsics, Pixel, Point3};

pub type CameraId = u32;
pub type PointId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconKind {
    Object,
    Background,
}

/// One registered camera: pose and intrinsics for a (frame, side) slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub camera_id: CameraId,
    pub frame_index: usize,
    pub side: Side,
    pub pose: CameraPose,
    pub intrinsics: PinholeIntrinsics,
}

/// One triangulated 3D point with its 2D feature observations.
#[derive(Debug, Clone, PartialEq)]
pub struct PointRecord {
    pub point_id: PointId,
    pub position: Point3,
    pub observations: Vec<(CameraId, Pixel)>,
}

/// Cameras plus points of one SfM result.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub kind: ReconKind,
    pub cameras: Vec<CameraRecord>,
    pub points: Vec<PointRecord>,
}

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("{path}: {message}")]
    ParseError { path: String, message: String },
    #[error("observation references unknown camera id {camera_id}")]
    DanglingReference { camera_id: CameraId },
    #[error("duplicate camera: id {camera_id} or slot frame {frame_index} {side}")]
    DuplicateCamera { camera_id: CameraId, frame_index: usize, side: Side },
    #[error("point {point_id} has {count} observations, need at least 2")]
    TooFewObservations { point_id: PointId, count: usize },
    #[error("reconstruction has no cameras or no points")]
    EmptyReconstruction,
    #[error("camera {camera_id} is invalid: {message}")]
    InvalidCamera { camera_id: CameraId, message: String },
    #[error("point {point_id} is invalid: {message}")]
    InvalidPoint { point_id: PointId, message: String },
    #[error("object and background reconstructions share no complete stereo frame")]
    NoCommonFrames,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Reconstruction {
    /// Validates all structural invariants. Called by the loader; synthetic
    /// producers construct valid data by design.
    pub fn validate(&self) -> Result<(), ReconError> {
        if self.cameras.is_empty() || self.points.is_empty() {
            return Err(ReconError::EmptyReconstruction);
        }
        let mut ids = BTreeSet::new();
        let mut slots = BTreeSet::new();
        for cam in &self.cameras {
            if !ids.insert(cam.camera_id) || !slots.insert((cam.frame_index, cam.side)) {
                return Err(ReconError::DuplicateCamera {
                    camera_id: cam.camera_id,
                    frame_index: cam.frame_index,
                    side: cam.side,
                });
            }
            if !cam.pose.center.coords.iter().all(|v| v.is_finite()) {
                return Err(ReconError::InvalidCamera {
                    camera_id: cam.camera_id,
                    message: "camera center is not finite".to_string(),
                });
            }
            if cam.intrinsics.focal_x <= 0.0 || cam.intrinsics.focal_y <= 0.0 {
                return Err(ReconError::InvalidCamera {
                    camera_id: cam.camera_id,
                    message: "focal lengths must be positive".to_string(),
                });
            }
        }
        for point in &self.points {
            if point.observations.len() < 2 {
                return Err(ReconError::TooFewObservations {
                    point_id: point.point_id,
                    count: point.observations.len(),
                });
            }
            if !point.position.coords.iter().all(|v| v.is_finite()) {
                return Err(ReconError::InvalidPoint {
                    point_id: point.point_id,
                    message: "position is not finite".to_string(),
                });
            }
            for (camera_id, _) in &point.observations {
                if !ids.contains(camera_id) {
                    return Err(ReconError::DanglingReference { camera_id: *camera_id });
                }
            }
        }
        Ok(())
    }

    pub fn camera(&self, camera_id: CameraId) -> Option<&CameraRecord> {
        self.cameras.iter().find(|c| c.camera_id == camera_id)
    }

    pub fn camera_at(&self, frame_index: usize, side: Side) -> Option<&CameraRecord> {
        self.cameras.iter().find(|c| c.frame_index == frame_index && c.side == side)
    }

    /// Frame indices that have both stereo cameras registered, ascending.
    pub fn stereo_frames(&self) -> Vec<usize> {
        let mut left = BTreeSet::new();
        let mut right = BTreeSet::new();
        for cam in &self.cameras {
            match cam.side {
                Side::Left => left.insert(cam.frame_index),
                Side::Right => right.insert(cam.frame_index),
            };
        }
        left.intersection(&right).copied().collect()
    }
}

/// Camera ids of one object-background frame pair that survived pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FramePair {
    pub frame_index: usize,
    pub object_left: CameraId,
    pub object_right: CameraId,
    pub background_left: CameraId,
    pub background_right: CameraId,
}

/// Keeps only frames where both reconstructions registered both stereo
/// sides; cameras of dropped frames take no further part in the pipeline.
pub fn pair_frames(obj: &Reconstruction, bg: &Reconstruction) -> Result<Vec<FramePair>, ReconError> {
    let mut slots: BTreeMap<usize, [Option<CameraId>; 4]> = BTreeMap::new();
    for (recon, base) in [(obj, 0usize), (bg, 2usize)] {
        for cam in &recon.cameras {
            let slot = base + usize::from(cam.side == Side::Right);
            slots.entry(cam.frame_index).or_default()[slot] = Some(cam.camera_id);
        }
    }
    let pairs: Vec<FramePair> = slots
        .into_iter()
        .filter_map(|(frame_index, ids)| match ids {
            [Some(ol), Some(or), Some(bl), Some(br)] => Some(FramePair {
                frame_index,
                object_left: ol,
                object_right: or,
                background_left: bl,
                background_right: br,
            }),
            _ => None,
        })
        .collect();
    if pairs.is_empty() {
        return Err(ReconError::NoCommonFrames);
    }
    Ok(pairs)
}

// Wire structs mirroring the documented JSON schema.

#[derive(Serialize, Deserialize)]
struct CameraWire {
    id: CameraId,
    frame: usize,
    side: Side,
    rotation: [f64; 9],
    center: [f64; 3],
    intrinsics: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct PointWire {
    id: PointId,
    xyz: [f64; 3],
    observations: Vec<(CameraId, f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct ReconWire {
    kind: ReconKind,
    cameras: Vec<CameraWire>,
    points: Vec<PointWire>,
}

pub fn save_reconstruction(recon: &Reconstruction, path: &Path) -> Result<(), ReconError> {
    let io_err = |source| ReconError::Io { path: path.display().to_string(), source };
    let wire = ReconWire {
        kind: recon.kind,
        cameras: recon
            .cameras
            .iter()
            .map(|cam| {
                let m = cam.pose.rotation.matrix();
                CameraWire {
                    id: cam.camera_id,
                    frame: cam.frame_index,
                    side: cam.side,
                    rotation: [
                        m[(0, 0)], m[(0, 1)], m[(0, 2)],
                        m[(1, 0)], m[(1, 1)], m[(1, 2)],
                        m[(2, 0)], m[(2, 1)], m[(2, 2)],
                    ],
                    center: cam.pose.center.coords.into(),
                    intrinsics: [
                        cam.intrinsics.focal_x,
                        cam.intrinsics.focal_y,
                        cam.intrinsics.principal_x,
                        cam.intrinsics.principal_y,
                    ],
                }
            })
            .collect(),
        points: recon
            .points
            .iter()
            .map(|p| PointWire {
                id: p.point_id,
                xyz: p.position.coords.into(),
                observations: p.observations.iter().map(|(id, pix)| (*id, pix.x, pix.y)).collect(),
            })
            .collect(),
    };
    let file = BufWriter::new(File::create(path).map_err(io_err)?);
    serde_json::to_writer_pretty(file, &wire).map_err(|e| ReconError::ParseError {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_reconstruction(path: &Path) -> Result<Reconstruction, ReconError> {
    let io_err = |source| ReconError::Io { path: path.display().to_string(), source };
    let parse_err = |message: String| ReconError::ParseError {
        path: path.display().to_string(),
        message,
    };
    let file = BufReader::new(File::open(path).map_err(io_err)?);
    let wire: ReconWire = serde_json::from_reader(file).map_err(|e| parse_err(e.to_string()))?;

    let mut cameras = Vec::with_capacity(wire.cameras.len());
    for cam in wire.cameras {
        let r = cam.rotation;
        let matrix = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        let rotation = Rotation::from_matrix(matrix).map_err(|e| ReconError::InvalidCamera {
            camera_id: cam.id,
            message: e.to_string(),
        })?;
        cameras.push(CameraRecord {
            camera_id: cam.id,
            frame_index: cam.frame,
            side: cam.side,
            pose: CameraPose::new(rotation, Point3::new(cam.center[0], cam.center[1], cam.center[2])),
            intrinsics: PinholeIntrinsics::new(
                cam.intrinsics[0],
                cam.intrinsics[1],
                cam.intrinsics[2],
                cam.intrinsics[3],
            ),
        });
    }
    let points = wire
        .points
        .into_iter()
        .map(|p| PointRecord {
            point_id: p.id,
            position: Point3::new(p.xyz[0], p.xyz[1], p.xyz[2]),
            observations: p.observations.into_iter().map(|(id, x, y)| (id, Pixel::new(x, y))).collect(),
        })
        .collect();

    let recon = Reconstruction { kind: wire.kind, cameras, points };
    recon.validate()?;
    Ok(recon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Unit;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use tempfile::tempdir;

    pub(crate) fn random_recon(seed: u64, frames: usize, n_points: usize) -> Reconstruction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cameras = Vec::new();
        for frame in 0..frames {
            for (k, side) in [Side::Left, Side::Right].into_iter().enumerate() {
                let axis = Unit::new_normalize(crate::Vec3::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                ));
                cameras.push(CameraRecord {
                    camera_id: (frame * 2 + k) as CameraId,
                    frame_index: frame,
                    side,
                    pose: CameraPose::new(
                        Rotation::from_axis_angle(&axis, rng.random::<f64>()),
                        Point3::new(rng.random(), rng.random(), rng.random()),
                    ),
                    intrinsics: PinholeIntrinsics::new(120.0, 121.5, 80.0, 60.25),
                });
            }
        }
        let points = (0..n_points)
            .map(|i| PointRecord {
                point_id: i as PointId,
                position: Point3::new(rng.random(), rng.random(), rng.random::<f64>() + 4.0),
                observations: (0..frames * 2)
                    .map(|c| (c as CameraId, Pixel::new(rng.random::<f64>() * 160.0, rng.random::<f64>() * 120.0)))
                    .collect(),
            })
            .collect();
        Reconstruction { kind: ReconKind::Object, cameras, points }
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("recon.json");
        let recon = random_recon(17, 3, 5);
        save_reconstruction(&recon, &path).unwrap();
        let back = load_reconstruction(&path).unwrap();
        assert_eq!(back, recon);
    }

    // Hand-written fixture exercising every field of the documented format.
    #[test]
    fn fixture_file_parses_to_expected_records() {
        let fixture = r#"{
            "kind": "background",
            "cameras": [
                { "id": 0, "frame": 2, "side": "left",
                  "rotation": [1,0,0, 0,1,0, 0,0,1],
                  "center": [0.5, -1.0, 2.0],
                  "intrinsics": [100.0, 101.0, 64.0, 48.0] },
                { "id": 1, "frame": 2, "side": "right",
                  "rotation": [0,-1,0, 1,0,0, 0,0,1],
                  "center": [0.7, -1.0, 2.0],
                  "intrinsics": [100.0, 101.0, 64.0, 48.0] }
            ],
            "points": [
                { "id": 9, "xyz": [1.0, 2.0, 3.0],
                  "observations": [[0, 10.5, 20.25], [1, 11.0, 20.25]] }
            ]
        }"#;
        let dir = tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        std::fs::write(&path, fixture).unwrap();
        let recon = load_reconstruction(&path).unwrap();

        assert_eq!(recon.kind, ReconKind::Background);
        assert_eq!(recon.cameras.len(), 2);
        let right = recon.camera(1).unwrap();
        assert_eq!(right.frame_index, 2);
        assert_eq!(right.side, Side::Right);
        assert_eq!(right.pose.center, Point3::new(0.7, -1.0, 2.0));
        assert_eq!(right.pose.rotation.matrix()[(0, 1)], -1.0);
        assert_eq!(right.intrinsics.focal_y, 101.0);
        let point = &recon.points[0];
        assert_eq!(point.point_id, 9);
        assert_eq!(point.position, Point3::new(1.0, 2.0, 3.0));
        assert_eq!(point.observations, vec![(0, Pixel::new(10.5, 20.25)), (1, Pixel::new(11.0, 20.25))]);
    }

    #[test]
    fn dangling_camera_reference_is_rejected() {
        let mut recon = random_recon(3, 2, 3);
        recon.points[0].observations[0].0 = 99;
        assert!(matches!(recon.validate(), Err(ReconError::DanglingReference { camera_id: 99 })));
    }

    #[test]
    fn duplicate_camera_id_is_rejected() {
        let mut recon = random_recon(3, 2, 3);
        recon.cameras[1].camera_id = recon.cameras[0].camera_id;
        assert!(matches!(recon.validate(), Err(ReconError::DuplicateCamera { .. })));
    }

    #[test]
    fn duplicate_frame_slot_is_rejected() {
        let mut recon = random_recon(3, 2, 3);
        recon.cameras[2].frame_index = 0;
        recon.cameras[2].side = Side::Left;
        assert!(matches!(recon.validate(), Err(ReconError::DuplicateCamera { .. })));
    }

    #[test]
    fn corrupted_files_error_instead_of_panicking() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("recon.json");
        let recon = random_recon(5, 2, 4);
        save_reconstruction(&recon, &path).unwrap();
        let good = std::fs::read_to_string(&path).unwrap();

        let corruptions: Vec<String> = vec![
            good[..good.len() / 2].to_string(),                  // truncation
            good.replace("0.", "NaN"),                           // NaN literals
            good.replace("\"left\"", "\"sideways\""),            // bad enum
            "not json at all".to_string(),                       // garbage
            good.replace("\"id\": 1,", "\"id\": 0,"),            // duplicate ids
            String::new(),                                       // empty file
        ];
        for (i, broken) in corruptions.iter().enumerate() {
            let bad_path = dir.path().join(format!("bad{i}.json"));
            std::fs::write(&bad_path, broken).unwrap();
            assert!(load_reconstruction(&bad_path).is_err(), "corruption {i} must be rejected");
        }
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("recon.json");
        let recon = random_recon(5, 2, 4);
        save_reconstruction(&recon, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Scale the first rotation entry well past the tolerance.
        let broken = text.replacen("\"rotation\": [", "\"rotation\": [1.5, ", 1);
        let broken = {
            // Drop one original entry to keep 9 numbers.
            let idx = broken.find("\"rotation\": [1.5, ").unwrap() + "\"rotation\": [1.5, ".len();
            let rest = &broken[idx..];
            let comma = rest.find(',').unwrap();
            format!("{}{}", &broken[..idx], &rest[comma + 1..])
        };
        std::fs::write(&path, broken).unwrap();
        assert!(matches!(load_reconstruction(&path), Err(ReconError::InvalidCamera { .. })));
    }

    fn drop_camera(recon: &mut Reconstruction, frame: usize, side: Side) {
        let id = recon.camera_at(frame, side).unwrap().camera_id;
        recon.cameras.retain(|c| c.camera_id != id);
        for p in &mut recon.points {
            p.observations.retain(|(cid, _)| *cid != id);
        }
    }

    #[test]
    fn identical_coverage_pairs_all_frames() {
        let obj = random_recon(1, 4, 3);
        let bg = random_recon(2, 4, 3);
        let pairs = pair_frames(&obj, &bg).unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(pairs.windows(2).all(|w| w[0].frame_index < w[1].frame_index));
    }

    #[test]
    fn missing_side_drops_the_frame() {
        let mut obj = random_recon(1, 5, 3);
        let bg = random_recon(2, 5, 3);
        drop_camera(&mut obj, 3, Side::Right);
        let pairs = pair_frames(&obj, &bg).unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(pairs.iter().all(|p| p.frame_index != 3));
    }

    #[test]
    fn pairing_matches_set_intersection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..30 {
            let mut obj = random_recon(100 + trial, 6, 3);
            let mut bg = random_recon(200 + trial, 6, 3);
            let mut expected: BTreeSet<usize> = (0..6).collect();
            for frame in 0..6usize {
                for side in [Side::Left, Side::Right] {
                    if rng.random::<f64>() < 0.25 {
                        drop_camera(&mut obj, frame, side);
                        expected.remove(&frame);
                    }
                    if rng.random::<f64>() < 0.25 {
                        drop_camera(&mut bg, frame, side);
                        expected.remove(&frame);
                    }
                }
            }
            match pair_frames(&obj, &bg) {
                Ok(pairs) => {
                    let got: BTreeSet<usize> = pairs.iter().map(|p| p.frame_index).collect();
                    assert_eq!(got, expected);
                }
                Err(ReconError::NoCommonFrames) => assert!(expected.is_empty()),
                Err(other) => panic!("unexpected error: {other}"),
            }
        }
    }

    #[test]
    fn pairing_is_symmetric_in_its_arguments() {
        let mut obj = random_recon(1, 5, 3);
        let mut bg = random_recon(2, 5, 3);
        drop_camera(&mut obj, 1, Side::Left);
        drop_camera(&mut bg, 4, Side::Right);
        let ab = pair_frames(&obj, &bg).unwrap();
        let ba = pair_frames(&bg, &obj).unwrap();
        let frames_ab: Vec<usize> = ab.iter().map(|p| p.frame_index).collect();
        let frames_ba: Vec<usize> = ba.iter().map(|p| p.frame_index).collect();
        assert_eq!(frames_ab, frames_ba);
        assert!(ab.iter().zip(&ba).all(|(x, y)| {
            x.object_left == y.background_left && x.background_right == y.object_right
        }));
    }

    #[test]
    fn no_common_frames_is_the_documented_error() {
        let mut obj = random_recon(1, 2, 3);
        let bg = random_recon(2, 2, 3);
        drop_camera(&mut obj, 0, Side::Left);
        drop_camera(&mut obj, 1, Side::Left);
        assert!(matches!(pair_frames(&obj, &bg), Err(ReconError::NoCommonFrames)));
    }
}
