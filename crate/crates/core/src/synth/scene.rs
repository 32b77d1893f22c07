use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{Matrix3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MotionConfig, SceneConfig, SynthError};
use crate::geometry::Rotation;
use crate::refine::derive_right_pose;
use crate::tracking::Side;
use crate::{CameraPose, PinholeIntrinsics, Point3, RigidTransform, Vec3};

/// One rigid object's ground truth: its points in the object frame
/// (centroid at the origin, lying in the z = 0 plane) and its
/// object-to-world map per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectGroundTruth {
    pub points: Vec<Point3>,
    pub motion: Vec<RigidTransform>,
}

impl ObjectGroundTruth {
    /// World position of point `j` at the given frame.
    pub fn world_point(&self, j: usize, frame: usize) -> Point3 {
        self.motion[frame].apply(&self.points[j])
    }

    /// World centroid per frame (equals the motion translation because the
    /// object-frame centroid is the origin).
    pub fn centroid(&self, frame: usize) -> Point3 {
        Point3::from(self.motion[frame].translation)
    }

    /// Length of the centroid path over the whole sequence.
    pub fn path_length(&self) -> f64 {
        self.motion
            .windows(2)
            .map(|w| (w[1].translation - w[0].translation).norm())
            .sum()
    }
}

/// Deterministic ground truth of one synthetic stereo scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGroundTruth {
    pub config: SceneConfig,
    pub seed: u64,
    /// Left camera pose per frame; the right camera is derived through the
    /// true baseline.
    pub rig: Vec<CameraPose>,
    pub background_points: Vec<Point3>,
    pub objects: Vec<ObjectGroundTruth>,
    /// Diagonal of the bounding box over all ground-truth geometry; noise
    /// scales and corruption magnitudes refer to it.
    pub extent: f64,
}

impl SceneGroundTruth {
    pub fn frames(&self) -> usize {
        self.config.frames
    }

    pub fn intrinsics(&self) -> PinholeIntrinsics {
        PinholeIntrinsics::new(
            self.config.focal,
            self.config.focal,
            self.config.image_width as f64 / 2.0,
            self.config.image_height as f64 / 2.0,
        )
    }

    pub fn pose(&self, frame: usize, side: Side) -> CameraPose {
        match side {
            Side::Left => self.rig[frame],
            Side::Right => derive_right_pose(&self.rig[frame], self.config.baseline),
        }
    }

    /// True pixel of a world point in the given camera, if visible.
    pub fn project(&self, frame: usize, side: Side, p: &Point3) -> Option<crate::Pixel> {
        let pose = self.pose(frame, side);
        let pix = self.intrinsics().project(&pose.world_to_camera(p)).ok()?;
        let (w, h) = (self.config.image_width as f64, self.config.image_height as f64);
        (pix.x >= 0.0 && pix.x < w && pix.y >= 0.0 && pix.y < h).then_some(pix)
    }
}

/// Object-to-world map at one frame under a motion config: translation from
/// the motion family, rotation an in-plane spin about the world z axis.
fn motion_at(motion: &MotionConfig, spin_rate_deg: f64, frame: usize) -> RigidTransform {
    let translation: Vec3 = match motion {
        MotionConfig::Linear { start, velocity } => {
            Vec3::from(*start) + Vec3::from(*velocity) * frame as f64
        }
        MotionConfig::CircularArc { center, radius, start_angle_deg, angular_velocity_deg } => {
            let theta = (start_angle_deg + angular_velocity_deg * frame as f64).to_radians();
            Vec3::from(*center) + Vec3::new(radius * theta.cos(), 0.0, radius * theta.sin())
        }
        MotionConfig::Piecewise { start, segments } => {
            let mut position = Vec3::from(*start);
            let mut remaining = frame;
            for segment in segments {
                let steps = remaining.min(segment.frames);
                position += Vec3::from(segment.velocity) * steps as f64;
                remaining -= steps;
                if remaining == 0 {
                    break;
                }
            }
            position
        }
    };
    let spin = (spin_rate_deg * frame as f64).to_radians();
    RigidTransform::new(Rotation::from_axis_angle(&Unit::new_normalize(Vec3::z()), spin), translation)
}

/// Generates a deterministic scene. Background points are re-sampled until
/// each is visible in both cameras of at least two frames; whole attempts
/// are retried when object visibility cannot be satisfied (objects must
/// stay fully inside both images at every frame).
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<SceneGroundTruth, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let yaw_rate = config.rig_yaw_rate_deg.to_radians();
    let rig: Vec<CameraPose> = (0..config.frames)
        .map(|i| {
            let center = Point3::from(Vec3::from(config.rig_start) + Vec3::from(config.rig_velocity) * i as f64);
            let rotation =
                Rotation::from_axis_angle(&Unit::new_normalize(Vec3::y()), -yaw_rate * i as f64);
            CameraPose::new(rotation, center)
        })
        .collect();

    let scene_shell = |background_points: Vec<Point3>, objects: Vec<ObjectGroundTruth>| {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        let mut grow = |p: &Point3| {
            min = min.inf(&p.coords);
            max = max.sup(&p.coords);
        };
        for pose in &rig {
            grow(&pose.center);
        }
        for p in &background_points {
            grow(p);
        }
        for object in &objects {
            for frame in 0..config.frames {
                for j in 0..object.points.len() {
                    grow(&object.world_point(j, frame));
                }
            }
        }
        SceneGroundTruth {
            config: config.clone(),
            seed,
            rig: rig.clone(),
            background_points,
            objects,
            extent: (max - min).norm(),
        }
    };

    let margin = 2.0;
    for _attempt in 0..config.max_attempts {
        let candidate = try_generate(config, &rig, &mut rng, margin)?;
        if let Some((background_points, objects)) = candidate {
            return Ok(scene_shell(background_points, objects));
        }
    }
    Err(SynthError::InfeasibleScene { attempts: config.max_attempts })
}

type Candidate = Option<(Vec<Point3>, Vec<ObjectGroundTruth>)>;

fn try_generate(
    config: &SceneConfig,
    rig: &[CameraPose],
    rng: &mut ChaCha8Rng,
    margin: f64,
) -> Result<Candidate, SynthError> {
    let intr = PinholeIntrinsics::new(
        config.focal,
        config.focal,
        config.image_width as f64 / 2.0,
        config.image_height as f64 / 2.0,
    );
    let visible = |pose: &CameraPose, p: &Point3| -> bool {
        match intr.project(&pose.world_to_camera(p)) {
            Ok(pix) => {
                pix.x >= margin
                    && pix.x < config.image_width as f64 - margin
                    && pix.y >= margin
                    && pix.y < config.image_height as f64 - margin
            }
            Err(_) => false,
        }
    };
    let stereo_pairs_seeing = |p: &Point3| -> usize {
        rig.iter()
            .filter(|left| {
                visible(left, p) && visible(&derive_right_pose(left, config.baseline), p)
            })
            .count()
    };

    // Background points: per-point rejection sampling.
    let lo = Vec3::from(config.background_min);
    let hi = Vec3::from(config.background_max);
    let mut background_points = Vec::with_capacity(config.n_background_points);
    for _ in 0..config.n_background_points {
        let mut found = false;
        for _try in 0..500 {
            let p = Point3::new(
                lo.x + rng.random::<f64>() * (hi.x - lo.x),
                lo.y + rng.random::<f64>() * (hi.y - lo.y),
                lo.z + rng.random::<f64>() * (hi.z - lo.z),
            );
            if stereo_pairs_seeing(&p) >= 2 {
                background_points.push(p);
                found = true;
                break;
            }
        }
        if !found {
            return Ok(None);
        }
    }

    // Objects: points on a planar patch, centroid moved to the origin.
    let mut objects = Vec::with_capacity(config.objects.len());
    for object in &config.objects {
        let mut points: Vec<Point3> = Vec::with_capacity(object.points);
        // Corner points guarantee the patch spans its configured extent.
        let e = object.half_extent;
        points.push(Point3::new(-e, -e, 0.0));
        points.push(Point3::new(e, -e, 0.0));
        points.push(Point3::new(e, e, 0.0));
        points.push(Point3::new(-e, e, 0.0));
        for _ in 4..object.points {
            points.push(Point3::new(
                (rng.random::<f64>() * 2.0 - 1.0) * e,
                (rng.random::<f64>() * 2.0 - 1.0) * e,
                0.0,
            ));
        }
        let centroid: Vec3 = points.iter().map(|p| p.coords).sum::<Vec3>() / points.len() as f64;
        for p in &mut points {
            *p = Point3::from(p.coords - centroid);
        }

        let motion: Vec<RigidTransform> = (0..config.frames)
            .map(|frame| motion_at(&object.motion, object.spin_rate_deg, frame))
            .collect();

        let truth = ObjectGroundTruth { points, motion };
        // Every object point must stay visible in both cameras of every
        // frame; this depends only on the configured motion, so a failure
        // here cannot be fixed by re-sampling and aborts the attempt.
        for frame in 0..config.frames {
            for j in 0..truth.points.len() {
                let w = truth.world_point(j, frame);
                if !visible(&rig[frame], &w)
                    || !visible(&derive_right_pose(&rig[frame], config.baseline), &w)
                {
                    return Ok(None);
                }
            }
        }
        objects.push(truth);
    }

    Ok(Some((background_points, objects)))
}

// Wire representation for ground-truth files written next to the rendered
// inputs, so evaluation can run in a separate process.

#[derive(Serialize, Deserialize)]
struct TransformWire {
    rotation: [f64; 9],
    translation: [f64; 3],
}

impl From<&RigidTransform> for TransformWire {
    fn from(t: &RigidTransform) -> Self {
        let m = t.rotation.matrix();
        TransformWire {
            rotation: [
                m[(0, 0)], m[(0, 1)], m[(0, 2)],
                m[(1, 0)], m[(1, 1)], m[(1, 2)],
                m[(2, 0)], m[(2, 1)], m[(2, 2)],
            ],
            translation: t.translation.into(),
        }
    }
}

impl TransformWire {
    fn into_transform(self, what: &str, path: &Path) -> Result<RigidTransform, SynthError> {
        let r = self.rotation;
        let matrix = Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8]);
        let rotation = Rotation::from_matrix(matrix).map_err(|e| SynthError::ParseError {
            path: path.display().to_string(),
            message: format!("{what}: {e}"),
        })?;
        Ok(RigidTransform::new(rotation, Vec3::from(self.translation)))
    }
}

#[derive(Serialize, Deserialize)]
struct ObjectWire {
    points: Vec<[f64; 3]>,
    motion: Vec<TransformWire>,
}

#[derive(Serialize, Deserialize)]
struct SceneWire {
    config: SceneConfig,
    seed: u64,
    rig: Vec<TransformWire>,
    background_points: Vec<[f64; 3]>,
    objects: Vec<ObjectWire>,
    extent: f64,
}

pub fn save_scene(scene: &SceneGroundTruth, path: &Path) -> Result<(), SynthError> {
    let wire = SceneWire {
        config: scene.config.clone(),
        seed: scene.seed,
        rig: scene
            .rig
            .iter()
            .map(|pose| TransformWire::from(&RigidTransform::new(pose.rotation, pose.center.coords)))
            .collect(),
        background_points: scene.background_points.iter().map(|p| p.coords.into()).collect(),
        objects: scene
            .objects
            .iter()
            .map(|o| ObjectWire {
                points: o.points.iter().map(|p| p.coords.into()).collect(),
                motion: o.motion.iter().map(TransformWire::from).collect(),
            })
            .collect(),
        extent: scene.extent,
    };
    let file = File::create(path).map_err(|source| SynthError::Io { path: path.display().to_string(), source })?;
    serde_json::to_writer_pretty(BufWriter::new(file), &wire).map_err(|e| SynthError::ParseError {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn load_scene(path: &Path) -> Result<SceneGroundTruth, SynthError> {
    let file = File::open(path).map_err(|source| SynthError::Io { path: path.display().to_string(), source })?;
    let wire: SceneWire = serde_json::from_reader(BufReader::new(file)).map_err(|e| SynthError::ParseError {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let rig = wire
        .rig
        .into_iter()
        .map(|t| {
            t.into_transform("rig pose", path)
                .map(|t| CameraPose::new(t.rotation, Point3::from(t.translation)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let objects = wire
        .objects
        .into_iter()
        .map(|o| {
            Ok(ObjectGroundTruth {
                points: o.points.into_iter().map(|p| Point3::new(p[0], p[1], p[2])).collect(),
                motion: o
                    .motion
                    .into_iter()
                    .map(|t| t.into_transform("object motion", path))
                    .collect::<Result<Vec<_>, _>>()?,
            })
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(SceneGroundTruth {
        config: wire.config,
        seed: wire.seed,
        rig,
        background_points: wire
            .background_points
            .into_iter()
            .map(|p| Point3::new(p[0], p[1], p[2]))
            .collect(),
        objects,
        extent: wire.extent,
    })
}
