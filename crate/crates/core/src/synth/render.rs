use nalgebra::Unit;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{NoiseConfig, SceneGroundTruth, SynthError};
use crate::geometry::Rotation;
use crate::recon::{CameraId, CameraRecord, PointRecord, ReconKind, Reconstruction};
use crate::refine::apply_scale;
use crate::tracking::{masks_from_labels, FlowField, InstanceMask, Side};
use crate::{CameraPose, Pixel, Point3, Vec3};

/// Everything the pipeline consumes, rendered from ground truth: per-frame
/// instance label rasters for both sides, temporal and stereo flow fields,
/// and the two initial reconstructions with the configured perturbations.
#[derive(Debug, Clone)]
pub struct RenderedInputs {
    pub width: usize,
    pub height: usize,
    /// Label raster per frame, 0 = unlabeled, object k has label k+1.
    pub left_labels: Vec<Vec<u8>>,
    pub right_labels: Vec<Vec<u8>>,
    /// Left frame i to left frame i+1, one field per consecutive pair.
    pub flow_ln: Vec<FlowField>,
    /// Left to right within each frame.
    pub flow_lr: Vec<FlowField>,
    pub object_recon: Reconstruction,
    pub background_recon: Reconstruction,
}

impl RenderedInputs {
    pub fn masks(&self, frame: usize, side: Side) -> Vec<InstanceMask> {
        let labels = match side {
            Side::Left => &self.left_labels[frame],
            Side::Right => &self.right_labels[frame],
        };
        masks_from_labels(frame, side, self.width, self.height, labels)
    }
}

/// Renders masks, flow fields and the two perturbed initial
/// reconstructions. The object reconstruction describes `scene.objects[0]`
/// in its own coordinate frame, multiplied by the configured scale
/// perturbation, with `outlier_camera_count` grossly corrupted left
/// cameras.
pub fn render_observations(
    scene: &SceneGroundTruth,
    noise: &NoiseConfig,
    seed: u64,
) -> Result<RenderedInputs, SynthError> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (width, height) = (scene.config.image_width, scene.config.image_height);

    let mut left_labels = Vec::with_capacity(scene.frames());
    let mut right_labels = Vec::with_capacity(scene.frames());
    for frame in 0..scene.frames() {
        left_labels.push(rasterize_labels(scene, frame, Side::Left));
        right_labels.push(rasterize_labels(scene, frame, Side::Right));
    }

    let mut flow_ln = Vec::with_capacity(scene.frames() - 1);
    for frame in 0..scene.frames() - 1 {
        flow_ln.push(render_flow(
            scene,
            &left_labels[frame],
            frame,
            Side::Left,
            frame + 1,
            Side::Left,
            noise.flow_sigma,
            &mut rng,
        ));
    }
    let mut flow_lr = Vec::with_capacity(scene.frames());
    for frame in 0..scene.frames() {
        flow_lr.push(render_flow(
            scene,
            &left_labels[frame],
            frame,
            Side::Left,
            frame,
            Side::Right,
            noise.flow_sigma,
            &mut rng,
        ));
    }

    let background_recon = render_background_recon(scene, noise, &mut rng);
    let object_recon = render_object_recon(scene, noise, &mut rng)?;

    Ok(RenderedInputs {
        width,
        height,
        left_labels,
        right_labels,
        flow_ln,
        flow_lr,
        object_recon,
        background_recon,
    })
}

/// Ray through a pixel intersected with the world plane z = depth.
fn backproject_to_plane(
    scene: &SceneGroundTruth,
    frame: usize,
    side: Side,
    pixel: &Pixel,
    plane_z: f64,
) -> Point3 {
    let pose = scene.pose(frame, side);
    let dir = pose.rotation.apply_inverse(&scene.intrinsics().ray_direction(pixel));
    let t = (plane_z - pose.center.z) / dir.z;
    pose.center + dir * t
}

/// Paints the instance labels of one image, resolving overlaps by depth
/// (the nearer object's plane wins per pixel).
fn rasterize_labels(scene: &SceneGroundTruth, frame: usize, side: Side) -> Vec<u8> {
    let (width, height) = (scene.config.image_width, scene.config.image_height);
    let pose = scene.pose(frame, side);
    let mut labels = vec![0u8; width * height];
    let mut depth = vec![f64::INFINITY; width * height];

    for (k, object) in scene.objects.iter().enumerate() {
        let projected: Vec<Pixel> = (0..object.points.len())
            .filter_map(|j| {
                let w = object.world_point(j, frame);
                scene.intrinsics().project(&pose.world_to_camera(&w)).ok()
            })
            .collect();
        if projected.len() < 3 {
            continue;
        }
        let hull = convex_hull(&projected);
        if hull.len() < 3 {
            continue;
        }
        let plane_z = object.motion[frame].translation.z;
        let min_x = hull.iter().map(|p| p.x).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_x = hull.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max).ceil().min(width as f64 - 1.0) as usize;
        let min_y = hull.iter().map(|p| p.y).fold(f64::INFINITY, f64::min).floor().max(0.0) as usize;
        let max_y = hull.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max).ceil().min(height as f64 - 1.0) as usize;
        for y in min_y..=max_y {
            for x in min_x..=max_x {
                let point = Pixel::new(x as f64, y as f64);
                if !inside_convex(&hull, &point) {
                    continue;
                }
                let w = backproject_to_plane(scene, frame, side, &point, plane_z);
                let d = pose.world_to_camera(&w).z;
                let idx = y * width + x;
                if d < depth[idx] {
                    depth[idx] = d;
                    labels[idx] = (k + 1) as u8;
                }
            }
        }
    }
    labels
}

/// Exact flow from known geometry: object pixels follow their patch plane
/// under the rigid motion, everything else follows the static backdrop
/// plane.
#[allow(clippy::too_many_arguments)]
fn render_flow(
    scene: &SceneGroundTruth,
    source_labels: &[u8],
    src_frame: usize,
    src_side: Side,
    dst_frame: usize,
    dst_side: Side,
    flow_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> FlowField {
    let (width, height) = (scene.config.image_width, scene.config.image_height);
    let mut flow = FlowField::zero(src_frame, src_side, dst_frame, dst_side, width, height);
    let dst_pose = scene.pose(dst_frame, dst_side);
    let noise = (flow_sigma > 0.0).then(|| Normal::new(0.0, flow_sigma).expect("validated sigma"));

    for y in 0..height {
        for x in 0..width {
            let pixel = Pixel::new(x as f64, y as f64);
            let label = source_labels[y * width + x];
            let target_world = if label > 0 {
                let object = &scene.objects[label as usize - 1];
                let plane_z = object.motion[src_frame].translation.z;
                let w = backproject_to_plane(scene, src_frame, src_side, &pixel, plane_z);
                let p_obj = object.motion[src_frame].inverse().apply(&w);
                object.motion[dst_frame].apply(&p_obj)
            } else {
                backproject_to_plane(scene, src_frame, src_side, &pixel, scene.config.backdrop_depth)
            };
            let Ok(target_pixel) = scene.intrinsics().project(&dst_pose.world_to_camera(&target_world))
            else {
                continue;
            };
            let mut u = (target_pixel.x - pixel.x) as f32;
            let mut v = (target_pixel.y - pixel.y) as f32;
            if let Some(n) = &noise {
                u += n.sample(rng) as f32;
                v += n.sample(rng) as f32;
            }
            flow.set(x, y, u, v);
        }
    }
    flow
}

fn perturb_pose(pose: &CameraPose, noise: &NoiseConfig, extent: f64, rng: &mut ChaCha8Rng) -> CameraPose {
    let mut out = *pose;
    if noise.pose_rot_sigma_deg > 0.0 {
        let normal = Normal::new(0.0, noise.pose_rot_sigma_deg.to_radians()).expect("validated sigma");
        let angle = normal.sample(rng);
        let axis = random_unit(rng);
        out = CameraPose::new(Rotation::exp(&(axis * angle)).compose(&out.rotation), out.center);
    }
    if noise.pose_trans_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.pose_trans_sigma * extent).expect("validated sigma");
        let shift = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        out = CameraPose::new(out.rotation, out.center + shift);
    }
    out
}

fn perturb_point(p: &Point3, noise: &NoiseConfig, extent: f64, rng: &mut ChaCha8Rng) -> Point3 {
    if noise.pose_trans_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.pose_trans_sigma * extent).expect("validated sigma");
        *p + Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng))
    } else {
        *p
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    loop {
        let v = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        if v.norm() > 1e-6 {
            return v.normalize();
        }
    }
}

fn render_background_recon(
    scene: &SceneGroundTruth,
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Reconstruction {
    let intr = scene.intrinsics();
    let mut cameras = Vec::new();
    for frame in 0..scene.frames() {
        for (k, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            cameras.push(CameraRecord {
                camera_id: (frame * 2 + k) as CameraId,
                frame_index: frame,
                side,
                pose: perturb_pose(&scene.pose(frame, side), noise, scene.extent, rng),
                intrinsics: intr,
            });
        }
    }
    let pixel_noise = (noise.pixel_sigma > 0.0).then(|| Normal::new(0.0, noise.pixel_sigma).expect("sigma"));
    let points = scene
        .background_points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let mut observations = Vec::new();
            for frame in 0..scene.frames() {
                for (k, side) in [Side::Left, Side::Right].into_iter().enumerate() {
                    if let Some(mut pix) = scene.project(frame, side, p) {
                        if let Some(n) = &pixel_noise {
                            pix.x += n.sample(rng);
                            pix.y += n.sample(rng);
                        }
                        observations.push(((frame * 2 + k) as CameraId, pix));
                    }
                }
            }
            PointRecord {
                point_id: j as u32,
                position: perturb_point(p, noise, scene.extent, rng),
                observations,
            }
        })
        .collect();
    Reconstruction { kind: ReconKind::Background, cameras, points }
}

/// The object reconstruction lives in the object's own frame: the rig
/// cameras are re-expressed relative to the (moving) object, exactly what
/// structure-from-motion on object-only images produces.
fn render_object_recon(
    scene: &SceneGroundTruth,
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Reconstruction, SynthError> {
    let object = &scene.objects[0];
    let intr = scene.intrinsics();
    let mut cameras = Vec::new();
    for frame in 0..scene.frames() {
        let motion = &object.motion[frame];
        for (k, side) in [Side::Left, Side::Right].into_iter().enumerate() {
            let world_pose = scene.pose(frame, side);
            // x_cam = R (M p + t - c) = (R M_rot) (p - M_rot^T (c - t)).
            let rotation = world_pose.rotation.compose(&motion.rotation);
            let center = Point3::from(
                motion.rotation.apply_inverse(&(world_pose.center.coords - motion.translation)),
            );
            cameras.push(CameraRecord {
                camera_id: (frame * 2 + k) as CameraId,
                frame_index: frame,
                side,
                pose: perturb_pose(&CameraPose::new(rotation, center), noise, scene.extent, rng),
                intrinsics: intr,
            });
        }
    }
    let pixel_noise = (noise.pixel_sigma > 0.0).then(|| Normal::new(0.0, noise.pixel_sigma).expect("sigma"));
    let points = object
        .points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let mut observations = Vec::new();
            for frame in 0..scene.frames() {
                let w = object.world_point(j, frame);
                for (k, side) in [Side::Left, Side::Right].into_iter().enumerate() {
                    if let Some(mut pix) = scene.project(frame, side, &w) {
                        if let Some(n) = &pixel_noise {
                            pix.x += n.sample(rng);
                            pix.y += n.sample(rng);
                        }
                        observations.push(((frame * 2 + k) as CameraId, pix));
                    }
                }
            }
            PointRecord {
                point_id: j as u32,
                position: perturb_point(p, noise, scene.extent, rng),
                observations,
            }
        })
        .collect();

    let mut recon = Reconstruction { kind: ReconKind::Object, cameras, points };
    if noise.scale_perturbation != 1.0 {
        recon = apply_scale(&recon, noise.scale_perturbation)
            .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    }

    // Gross corruption of left cameras past the gauge anchor: the badly
    // registered cameras of real object reconstructions.
    if noise.outlier_camera_count > 0 {
        let spread = recon
            .cameras
            .iter()
            .flat_map(|a| recon.cameras.iter().map(move |b| (a.pose.center - b.pose.center).norm()))
            .fold(0.0f64, f64::max)
            .max(1e-3);
        let mut frames: Vec<usize> = (1..scene.frames()).collect();
        for _ in 0..noise.outlier_camera_count.min(frames.len()) {
            let pick = rng.random_range(0..frames.len());
            let frame = frames.remove(pick);
            let axis = random_unit(rng);
            let shift = random_unit(rng) * 0.3 * spread;
            for cam in &mut recon.cameras {
                if cam.frame_index == frame && cam.side == Side::Left {
                    cam.pose = CameraPose::new(
                        Rotation::from_axis_angle(&Unit::new_normalize(axis), std::f64::consts::FRAC_PI_2)
                            .compose(&cam.pose.rotation),
                        cam.pose.center + shift,
                    );
                }
            }
        }
    }
    Ok(recon)
}

/// Convex hull by the monotone chain.
fn convex_hull(points: &[Pixel]) -> Vec<Pixel> {
    let mut pts: Vec<Pixel> = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).expect("finite pixels"));
    pts.dedup_by(|a, b| a == b);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Pixel, a: &Pixel, b: &Pixel| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
    let mut hull: Vec<Pixel> = Vec::with_capacity(pts.len() * 2);
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

fn inside_convex(hull: &[Pixel], p: &Pixel) -> bool {
    if hull.len() < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..hull.len() {
        let a = &hull[i];
        let b = &hull[(i + 1) % hull.len()];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::estimate_scale;
    use crate::synth::{generate_scene, SceneConfig};
    use crate::tracking::overlap;

    fn scene() -> SceneGroundTruth {
        generate_scene(&SceneConfig::default(), 4).unwrap()
    }

    #[test]
    fn hull_of_square_contains_interior() {
        let pts = vec![
            Pixel::new(0.0, 0.0),
            Pixel::new(10.0, 0.0),
            Pixel::new(10.0, 10.0),
            Pixel::new(0.0, 10.0),
            Pixel::new(5.0, 5.0),
        ];
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        assert!(inside_convex(&hull, &Pixel::new(5.0, 5.0)));
        assert!(inside_convex(&hull, &Pixel::new(0.0, 0.0)));
        assert!(!inside_convex(&hull, &Pixel::new(11.0, 5.0)));
    }

    #[test]
    fn rendering_is_deterministic() {
        let s = scene();
        let noise = NoiseConfig { pixel_sigma: 0.5, pose_rot_sigma_deg: 1.0, ..NoiseConfig::default() };
        let a = render_observations(&s, &noise, 3).unwrap();
        let b = render_observations(&s, &noise, 3).unwrap();
        assert_eq!(a.left_labels, b.left_labels);
        assert_eq!(a.flow_ln, b.flow_ln);
        assert_eq!(a.object_recon, b.object_recon);
        assert_eq!(a.background_recon, b.background_recon);
    }

    #[test]
    fn masks_are_nonempty_and_labeled() {
        let s = scene();
        let rendered = render_observations(&s, &NoiseConfig::default(), 0).unwrap();
        for frame in 0..s.frames() {
            let masks = rendered.masks(frame, Side::Left);
            assert_eq!(masks.len(), 1);
            assert_eq!(masks[0].instance_label, 1);
            assert!(masks[0].area() > 50, "patch rasterizes to a solid mask");
        }
    }

    #[test]
    fn zero_noise_reconstructions_reproject_exactly() {
        let s = scene();
        let rendered = render_observations(&s, &NoiseConfig::default(), 0).unwrap();
        for recon in [&rendered.object_recon, &rendered.background_recon] {
            recon.validate().unwrap();
            let mut worst = 0.0f64;
            for point in &recon.points {
                for (camera_id, pix) in &point.observations {
                    let cam = recon.camera(*camera_id).unwrap();
                    let projected = cam
                        .intrinsics
                        .project(&cam.pose.world_to_camera(&point.position))
                        .unwrap();
                    worst = worst.max((projected - pix).norm());
                }
            }
            assert!(worst < 1e-9, "worst reprojection error {worst}");
        }
    }

    // Homogeneity: a 3x scale perturbation makes the estimated correction
    // one third of the unperturbed estimate.
    #[test]
    fn scale_perturbation_shows_up_in_estimate() {
        let s = scene();
        let clean = render_observations(&s, &NoiseConfig::default(), 0).unwrap();
        let scaled = render_observations(
            &s,
            &NoiseConfig { scale_perturbation: 3.0, ..NoiseConfig::default() },
            0,
        )
        .unwrap();
        let base = estimate_scale(&clean.object_recon, s.config.baseline).unwrap();
        let corrected = estimate_scale(&scaled.object_recon, s.config.baseline).unwrap();
        assert!((base - 1.0).abs() < 1e-12);
        assert!((corrected - 1.0 / 3.0).abs() < 1e-12);
    }

    // Statistical oracle: the empirical residual std over >= 1e4
    // observations must sit in [0.45, 0.55] for sigma = 0.5.
    #[test]
    fn pixel_noise_has_the_configured_sigma() {
        let mut config = SceneConfig::default();
        config.frames = 16;
        config.n_background_points = 200;
        let s = generate_scene(&config, 8).unwrap();
        let noise = NoiseConfig { pixel_sigma: 0.5, ..NoiseConfig::default() };
        let rendered = render_observations(&s, &noise, 99).unwrap();

        let mut samples: Vec<f64> = Vec::new();
        for point in &rendered.background_recon.points {
            let truth = s.background_points[point.point_id as usize];
            for (camera_id, pix) in &point.observations {
                let frame = *camera_id as usize / 2;
                let side = if camera_id % 2 == 0 { Side::Left } else { Side::Right };
                let clean = s.project(frame, side, &truth).unwrap();
                samples.push(pix.x - clean.x);
                samples.push(pix.y - clean.y);
            }
        }
        assert!(samples.len() >= 10_000, "have {} residual samples", samples.len());
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / samples.len() as f64;
        let std = var.sqrt();
        assert!((0.45..=0.55).contains(&std), "empirical std {std}");
    }

    // Ground-truth flow applied to a ground-truth mask reproduces the next
    // ground-truth mask up to rasterization.
    #[test]
    fn flow_transports_masks_onto_next_frame_masks() {
        let s = generate_scene(&SceneConfig::default(), 6).unwrap();
        let rendered = render_observations(&s, &NoiseConfig::default(), 0).unwrap();
        for frame in 0..s.frames() - 1 {
            let mask = rendered.masks(frame, Side::Left).remove(0);
            let next_truth = rendered.masks(frame + 1, Side::Left).remove(0);
            let warped = rendered.flow_ln[frame].warp_mask(&mask).unwrap();
            let iou = overlap(&warped, &next_truth);
            assert!(iou > 0.95, "frame {frame}: warped/truth IoU {iou}");
        }
    }

    // A spinning object bends the flow field across the patch; the warped
    // prediction still has to land on the true next-frame mask.
    #[test]
    fn rotating_object_flow_still_predicts_next_mask() {
        let mut config = SceneConfig::default();
        config.objects[0].spin_rate_deg = 2.0;
        let s = generate_scene(&config, 6).unwrap();
        let rendered = render_observations(&s, &NoiseConfig::default(), 0).unwrap();
        for frame in 0..s.frames() - 1 {
            let mask = rendered.masks(frame, Side::Left).remove(0);
            let next_truth = rendered.masks(frame + 1, Side::Left).remove(0);
            let warped = rendered.flow_ln[frame].warp_mask(&mask).unwrap();
            let iou = overlap(&warped, &next_truth);
            assert!(iou > 0.9, "frame {frame}: warped/truth IoU {iou}");
        }
    }

    #[test]
    fn stereo_flow_matches_disparity() {
        let s = scene();
        let rendered = render_observations(&s, &NoiseConfig::default(), 0).unwrap();
        for frame in 0..s.frames() {
            let mask = rendered.masks(frame, Side::Left).remove(0);
            let right_truth = rendered.masks(frame, Side::Right).remove(0);
            let warped = rendered.flow_lr[frame].warp_mask(&mask).unwrap();
            let iou = overlap(&warped, &right_truth);
            assert!(iou > 0.95, "frame {frame}: stereo warp IoU {iou}");
        }
    }

    #[test]
    fn outlier_cameras_are_corrupted() {
        let s = scene();
        let clean = render_observations(&s, &NoiseConfig::default(), 0).unwrap();
        let noisy = render_observations(
            &s,
            &NoiseConfig { outlier_camera_count: 1, ..NoiseConfig::default() },
            0,
        )
        .unwrap();
        let mut corrupted = 0;
        for (a, b) in clean.object_recon.cameras.iter().zip(&noisy.object_recon.cameras) {
            if a.pose.rotation.angle_to(&b.pose.rotation) > 1.0 {
                corrupted += 1;
                assert_eq!(a.side, Side::Left);
                assert_ne!(a.frame_index, 0, "gauge anchor is never corrupted");
            }
        }
        assert_eq!(corrupted, 1);
    }
}
