//! Small hand-rolled reconstructions for solver tests: a static point
//! cloud observed by a rigid stereo rig with baseline 0.2, optionally with
//! pose, point and pixel noise on the initial values while the
//! observations stay tied to the true geometry.

use nalgebra::Unit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::Rotation;
use crate::recon::{CameraId, CameraRecord, PointRecord, ReconKind, Reconstruction};
use crate::refine::derive_right_pose;
use crate::tracking::Side;
use crate::{CameraPose, PinholeIntrinsics, Point3, Vec3};

pub const BASELINE: f64 = 0.2;

fn rig_pose(frame: usize) -> CameraPose {
    let yaw = -0.004 * frame as f64;
    CameraPose::new(
        Rotation::from_axis_angle(&Unit::new_normalize(Vec3::y()), yaw),
        Point3::new(0.06 * frame as f64, 0.01 * frame as f64, 0.05 * frame as f64),
    )
}

fn scene_points(n_points: usize, rng: &mut ChaCha8Rng) -> Vec<Point3> {
    (0..n_points)
        .map(|_| {
            Point3::new(
                (rng.random::<f64>() - 0.5) * 2.4,
                (rng.random::<f64>() - 0.5) * 1.6,
                4.0 + rng.random::<f64>() * 2.0,
            )
        })
        .collect()
}

/// Exact reconstruction: true poses, true points, exact observations.
pub fn noiseless_recon(frames: usize, n_points: usize) -> Reconstruction {
    build(frames, n_points, 0.0, 0.0, 1)
}

/// True observations, perturbed initial poses and points.
pub fn perturbed_recon(frames: usize, n_points: usize, pose_sigma: f64, seed: u64) -> Reconstruction {
    build(frames, n_points, 0.0, pose_sigma, seed)
}

/// Noisy observations plus perturbed initial poses and points.
pub fn noisy_recon(
    frames: usize,
    n_points: usize,
    pixel_sigma: f64,
    pose_sigma: f64,
    seed: u64,
) -> Reconstruction {
    build(frames, n_points, pixel_sigma, pose_sigma, seed)
}

fn build(frames: usize, n_points: usize, pixel_sigma: f64, pose_sigma: f64, seed: u64) -> Reconstruction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = PinholeIntrinsics::new(120.0, 120.0, 80.0, 60.0);
    let points = scene_points(n_points, &mut rng);

    let pixel_noise = (pixel_sigma > 0.0).then(|| Normal::new(0.0, pixel_sigma).expect("sigma"));
    let pose_noise = (pose_sigma > 0.0).then(|| Normal::new(0.0, pose_sigma).expect("sigma"));

    let mut cameras = Vec::new();
    for frame in 0..frames {
        let left_true = rig_pose(frame);
        for (k, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            let true_pose = match side {
                Side::Left => left_true,
                Side::Right => derive_right_pose(&left_true, BASELINE),
            };
            let pose = match &pose_noise {
                Some(noise) => {
                    let axis = Vec3::new(
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                    )
                    .normalize();
                    let angle = noise.sample(&mut rng);
                    let shift =
                        Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
                    CameraPose::new(
                        Rotation::exp(&(axis * angle)).compose(&true_pose.rotation),
                        true_pose.center + shift,
                    )
                }
                None => true_pose,
            };
            cameras.push(CameraRecord {
                camera_id: (frame * 2 + k) as CameraId,
                frame_index: frame,
                side,
                pose,
                intrinsics: intr,
            });
        }
    }

    let point_records = points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let mut observations = Vec::new();
            for frame in 0..frames {
                let left_true = rig_pose(frame);
                for (k, side) in [Side::Left, Side::Right].into_iter().enumerate() {
                    let true_pose = match side {
                        Side::Left => left_true,
                        Side::Right => derive_right_pose(&left_true, BASELINE),
                    };
                    let mut pix = intr.project(&true_pose.world_to_camera(p)).expect("points in front");
                    if let Some(noise) = &pixel_noise {
                        pix.x += noise.sample(&mut rng);
                        pix.y += noise.sample(&mut rng);
                    }
                    observations.push(((frame * 2 + k) as CameraId, pix));
                }
            }
            let position = match &pose_noise {
                Some(noise) => {
                    *p + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                }
                None => *p,
            };
            PointRecord { point_id: j as u32, position, observations }
        })
        .collect();

    Reconstruction { kind: ReconKind::Object, cameras, points: point_records }
}
