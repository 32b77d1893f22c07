use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use super::{MonoObservation, RefineError, RigModel, StereoObservation};
use crate::geometry::DEPTH_EPSILON;
use crate::recon::{CameraId, PointId, Reconstruction};
use crate::tracking::Side;
use crate::{CameraPose, PinholeIntrinsics, Point3};

/// One pose variable: the left camera of a frame. The right camera is
/// derived from it through the rig baseline and is never free.
#[derive(Debug, Clone)]
pub(crate) struct FrameVar {
    pub frame_index: usize,
    pub left_camera_id: CameraId,
    pub right_camera_id: Option<CameraId>,
    pub intrinsics_left: PinholeIntrinsics,
    /// Gauge anchor: the first frame's pose is frozen.
    pub anchored: bool,
}

/// Residual blocks over pose and point variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualBlock {
    /// 3 residuals: (u_left, u_right, v) against the derived stereo pair.
    Stereo { frame: usize, point: usize, u_left: f64, u_right: f64, v: f64 },
    /// 2 residuals: plain reprojection in one camera.
    Mono { frame: usize, point: usize, side: Side, x: f64, y: f64 },
}

impl ResidualBlock {
    pub fn dim(&self) -> usize {
        match self {
            ResidualBlock::Stereo { .. } => 3,
            ResidualBlock::Mono { .. } => 2,
        }
    }
}

/// Nonlinear least-squares refinement problem: per-frame left poses as
/// 6-parameter local increments, per-point 3-vectors, and the residual
/// blocks connecting them.
#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    pub(crate) frames: Vec<FrameVar>,
    pub(crate) point_ids: Vec<PointId>,
    pub(crate) blocks: Vec<ResidualBlock>,
    pub(crate) rig: RigModel,
    pub(crate) base: Reconstruction,
    initial: ProblemState,
}

/// Current values of all variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemState {
    pub poses: Vec<CameraPose>,
    pub points: Vec<Point3>,
}

/// Unweighted residual vector and its analytic Jacobian over the free
/// parameters, with excluded (behind-camera) blocks reported.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub residuals: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub excluded_blocks: Vec<usize>,
}

impl LeastSquaresProblem {
    pub fn initial_state(&self) -> ProblemState {
        self.initial.clone()
    }

    pub fn rig(&self) -> RigModel {
        self.rig
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Frame indices carrying a pose variable, ascending.
    pub fn frame_indices(&self) -> Vec<usize> {
        self.frames.iter().map(|f| f.frame_index).collect()
    }

    pub fn n_points(&self) -> usize {
        self.point_ids.len()
    }

    /// Total pose parameters, including the anchored frame.
    pub fn n_pose_params(&self) -> usize {
        6 * self.frames.len()
    }

    pub fn n_point_params(&self) -> usize {
        3 * self.point_ids.len()
    }

    /// Free parameters: 6 per non-anchored frame plus 3 per point.
    pub fn n_free_params(&self) -> usize {
        6 * self.frames.iter().filter(|f| !f.anchored).count() + self.n_point_params()
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn n_stereo_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| matches!(b, ResidualBlock::Stereo { .. })).count()
    }

    pub fn n_mono_blocks(&self) -> usize {
        self.blocks.iter().filter(|b| matches!(b, ResidualBlock::Mono { .. })).count()
    }

    /// Column offset of a frame's pose parameters in the free-parameter
    /// vector, `None` for the anchor.
    pub(crate) fn pose_offset(&self, frame: usize) -> Option<usize> {
        if self.frames[frame].anchored {
            return None;
        }
        let free_before = self.frames[..frame].iter().filter(|f| !f.anchored).count();
        Some(6 * free_before)
    }

    pub(crate) fn point_offset(&self, point: usize) -> usize {
        6 * self.frames.iter().filter(|f| !f.anchored).count() + 3 * point
    }

    /// Applies a free-parameter increment: pose retractions and point
    /// shifts.
    pub(crate) fn retract(&self, state: &ProblemState, delta: &DVector<f64>) -> ProblemState {
        let mut next = state.clone();
        for (idx, _) in self.frames.iter().enumerate() {
            if let Some(off) = self.pose_offset(idx) {
                let omega = Vector3::new(delta[off], delta[off + 1], delta[off + 2]);
                let shift = Vector3::new(delta[off + 3], delta[off + 4], delta[off + 5]);
                next.poses[idx] = state.poses[idx].retract(&omega, &shift);
            }
        }
        for (idx, point) in next.points.iter_mut().enumerate() {
            let off = self.point_offset(idx);
            *point += Vector3::new(delta[off], delta[off + 1], delta[off + 2]);
        }
        next
    }

    /// Writes a solved state back into a copy of the source reconstruction:
    /// left cameras take the refined poses, right cameras are re-derived
    /// from them (shared rotation, center offset by the baseline along the
    /// camera x-axis), points take the refined positions. Observations are
    /// never altered.
    pub(crate) fn export_reconstruction(&self, state: &ProblemState) -> Reconstruction {
        let mut out = self.base.clone();
        for (idx, frame) in self.frames.iter().enumerate() {
            let pose = state.poses[idx];
            for cam in &mut out.cameras {
                if cam.camera_id == frame.left_camera_id {
                    cam.pose = pose;
                } else if Some(cam.camera_id) == frame.right_camera_id {
                    cam.pose = derive_right_pose(&pose, self.rig.baseline);
                }
            }
        }
        let by_id: BTreeMap<PointId, &Point3> =
            self.point_ids.iter().copied().zip(state.points.iter()).collect();
        for point in &mut out.points {
            if let Some(p) = by_id.get(&point.point_id) {
                point.position = **p;
            }
        }
        out
    }
}

/// The rigid-rig right camera: same rotation, center shifted by the
/// baseline along the camera's +x axis in world coordinates.
pub fn derive_right_pose(left: &CameraPose, baseline: f64) -> CameraPose {
    CameraPose::new(left.rotation, left.center + left.x_axis_world() * baseline)
}

/// Assembles the refinement problem from a reconstruction (already scaled
/// to the rig baseline) and its paired observations. The lowest frame with
/// a left camera anchors the gauge. Frames without a left camera cannot
/// carry a pose variable; their observations are dropped and the cameras
/// pass through refinement untouched.
pub fn build_problem(
    recon: &Reconstruction,
    stereo: &[StereoObservation],
    mono: &[MonoObservation],
    rig: RigModel,
) -> Result<LeastSquaresProblem, RefineError> {
    let mut frames: Vec<FrameVar> = Vec::new();
    let mut frame_of: BTreeMap<usize, usize> = BTreeMap::new();
    let mut left_frames: Vec<usize> = recon
        .cameras
        .iter()
        .filter(|c| c.side == Side::Left)
        .map(|c| c.frame_index)
        .collect();
    left_frames.sort_unstable();
    left_frames.dedup();
    for (idx, frame_index) in left_frames.iter().copied().enumerate() {
        let left = recon.camera_at(frame_index, Side::Left).expect("frame listed by left camera");
        frames.push(FrameVar {
            frame_index,
            left_camera_id: left.camera_id,
            right_camera_id: recon.camera_at(frame_index, Side::Right).map(|c| c.camera_id),
            intrinsics_left: left.intrinsics,
            anchored: idx == 0,
        });
        frame_of.insert(frame_index, idx);
    }

    let point_ids: Vec<PointId> = recon.points.iter().map(|p| p.point_id).collect();
    let point_of: BTreeMap<PointId, usize> =
        point_ids.iter().copied().enumerate().map(|(i, id)| (id, i)).collect();
    let camera_side: BTreeMap<CameraId, (usize, Side)> = recon
        .cameras
        .iter()
        .map(|c| (c.camera_id, (c.frame_index, c.side)))
        .collect();

    let mut blocks = Vec::with_capacity(stereo.len() + mono.len());
    for obs in stereo {
        if let (Some(&frame), Some(&point)) = (frame_of.get(&obs.frame_index), point_of.get(&obs.point_id)) {
            blocks.push(ResidualBlock::Stereo {
                frame,
                point,
                u_left: obs.u_left,
                u_right: obs.u_right,
                v: obs.v,
            });
        }
    }
    for obs in mono {
        let (frame_index, side) = camera_side[&obs.camera_id];
        if let (Some(&frame), Some(&point)) = (frame_of.get(&frame_index), point_of.get(&obs.point_id)) {
            blocks.push(ResidualBlock::Mono { frame, point, side, x: obs.pixel.x, y: obs.pixel.y });
        }
    }
    if blocks.is_empty() || frames.is_empty() {
        return Err(RefineError::EmptyProblem);
    }

    let initial = ProblemState {
        poses: frames
            .iter()
            .map(|f| recon.camera(f.left_camera_id).expect("left camera exists").pose)
            .collect(),
        points: recon.points.iter().map(|p| p.position).collect(),
    };

    Ok(LeastSquaresProblem { frames, point_ids, blocks, rig, base: recon.clone(), initial })
}

/// Evaluation of one residual block: residual, Jacobian w.r.t. the pose
/// increment (omega, delta_c) and w.r.t. the point.
pub(crate) struct BlockEval {
    pub dim: usize,
    pub r: [f64; 3],
    pub j_pose: [[f64; 6]; 3],
    pub j_point: [[f64; 3]; 3],
}

fn skew(q: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -q.z, q.y, q.z, 0.0, -q.x, -q.y, q.x, 0.0)
}

/// Evaluates one block at the given state; `None` flags a point behind the
/// camera (block excluded from the evaluation).
pub(crate) fn evaluate_block(
    problem: &LeastSquaresProblem,
    state: &ProblemState,
    block: &ResidualBlock,
) -> Option<BlockEval> {
    let (frame_idx, point_idx) = match block {
        ResidualBlock::Stereo { frame, point, .. } | ResidualBlock::Mono { frame, point, .. } => {
            (*frame, *point)
        }
    };
    let pose = &state.poses[frame_idx];
    let p = &state.points[point_idx];
    let q = pose.world_to_camera(p).coords;
    let (x, y, z) = (q.x, q.y, q.z);
    if z <= DEPTH_EPSILON {
        return None;
    }
    let intr = &problem.frames[frame_idx].intrinsics_left;
    let b = problem.rig.baseline;

    // dh/dq rows for the predicted image measurements; residual is
    // observed - predicted, so dr/d* = -dh/dq * dq/d*.
    let mut a = [[0.0f64; 3]; 3];
    let mut r = [0.0f64; 3];
    let dim = block.dim();
    match *block {
        ResidualBlock::Stereo { u_left, u_right, v, .. } => {
            let (fx, fy) = (intr.focal_x, intr.focal_y);
            r[0] = u_left - (fx * x / z + intr.principal_x);
            r[1] = u_right - (fx * (x - b) / z + intr.principal_x);
            r[2] = v - (fy * y / z + intr.principal_y);
            a[0] = [fx / z, 0.0, -fx * x / (z * z)];
            a[1] = [fx / z, 0.0, -fx * (x - b) / (z * z)];
            a[2] = [0.0, fy / z, -fy * y / (z * z)];
        }
        ResidualBlock::Mono { side, x: ox, y: oy, .. } => {
            // The right camera is derived: its camera frame is the left one
            // shifted by the baseline along x.
            let shift = match side {
                Side::Left => 0.0,
                Side::Right => b,
            };
            let (fx, fy) = (intr.focal_x, intr.focal_y);
            r[0] = ox - (fx * (x - shift) / z + intr.principal_x);
            r[1] = oy - (fy * y / z + intr.principal_y);
            a[0] = [fx / z, 0.0, -fx * (x - shift) / (z * z)];
            a[1] = [0.0, fy / z, -fy * y / (z * z)];
        }
    }

    // dq/domega = -skew(q), dq/dc = -R, dq/dp = R.
    let rot = pose.rotation.matrix();
    let sk = skew(&q);
    let mut j_pose = [[0.0f64; 6]; 3];
    let mut j_point = [[0.0f64; 3]; 3];
    for row in 0..dim {
        for col in 0..3 {
            let mut d_omega = 0.0;
            let mut d_center = 0.0;
            let mut d_point = 0.0;
            for k in 0..3 {
                d_omega += a[row][k] * sk[(k, col)];
                d_center += a[row][k] * rot[(k, col)];
                d_point -= a[row][k] * rot[(k, col)];
            }
            j_pose[row][col] = d_omega;
            j_pose[row][col + 3] = d_center;
            j_point[row][col] = d_point;
        }
    }

    Some(BlockEval { dim, r, j_pose, j_point })
}

/// Evaluates the full unweighted residual vector and its analytic Jacobian
/// over the free parameters. Blocks whose point lies behind the camera are
/// excluded and reported.
pub fn evaluate_residuals_and_jacobian(
    problem: &LeastSquaresProblem,
    state: &ProblemState,
) -> Result<Evaluation, RefineError> {
    let finite_state = state.poses.iter().all(|p| p.center.coords.iter().all(|v| v.is_finite()))
        && state.points.iter().all(|p| p.coords.iter().all(|v| v.is_finite()));
    if !finite_state {
        return Err(RefineError::NumericalFailure("state contains non-finite values".to_string()));
    }

    let evals: Vec<Option<BlockEval>> = problem
        .blocks
        .iter()
        .map(|block| evaluate_block(problem, state, block))
        .collect();

    let n_rows: usize = evals.iter().flatten().map(|e| e.dim).sum();
    let n_cols = problem.n_free_params();
    let mut residuals = DVector::zeros(n_rows);
    let mut jacobian = DMatrix::zeros(n_rows, n_cols);
    let mut excluded = Vec::new();
    let mut row = 0usize;
    for (idx, eval) in evals.iter().enumerate() {
        let Some(eval) = eval else {
            excluded.push(idx);
            continue;
        };
        let (frame_idx, point_idx) = match problem.blocks[idx] {
            ResidualBlock::Stereo { frame, point, .. } | ResidualBlock::Mono { frame, point, .. } => {
                (frame, point)
            }
        };
        let pose_off = problem.pose_offset(frame_idx);
        let point_off = problem.point_offset(point_idx);
        for k in 0..eval.dim {
            residuals[row + k] = eval.r[k];
            if let Some(off) = pose_off {
                for c in 0..6 {
                    jacobian[(row + k, off + c)] = eval.j_pose[k][c];
                }
            }
            for c in 0..3 {
                jacobian[(row + k, point_off + c)] = eval.j_point[k][c];
            }
        }
        row += eval.dim;
    }

    if residuals.iter().any(|v| !v.is_finite()) || jacobian.iter().any(|v| !v.is_finite()) {
        return Err(RefineError::NumericalFailure("non-finite residual or Jacobian entry".to_string()));
    }
    Ok(Evaluation { residuals, jacobian, excluded_blocks: excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::pair_stereo_features;
    use crate::synth::fixtures;

    #[test]
    fn counting_two_frames_four_points_all_stereo() {
        let recon = fixtures::noiseless_recon(2, 4);
        let (stereo, mono) = pair_stereo_features(&recon, 3.0);
        assert_eq!(stereo.len(), 8, "4 points x 2 frames");
        assert!(mono.is_empty());
        let problem = build_problem(&recon, &stereo, &mono, RigModel::new(0.2).unwrap()).unwrap();
        assert_eq!(problem.frame_indices(), vec![0, 1]);
        assert_eq!(problem.n_pose_params(), 12, "2 frames x 6 params");
        assert_eq!(problem.n_free_params(), 6 + 12, "one pose anchored, 4 points x 3");
        assert_eq!(problem.n_point_params(), 12);
        assert_eq!(problem.n_stereo_blocks(), 8);
        assert_eq!(problem.blocks().iter().map(ResidualBlock::dim).sum::<usize>(), 24);
    }

    #[test]
    fn mono_only_problem_builds() {
        let recon = fixtures::noiseless_recon(2, 4);
        let (_, _) = pair_stereo_features(&recon, 3.0);
        // Force everything mono with a zero tolerance.
        let (stereo, mono) = pair_stereo_features(&recon, 0.0);
        assert!(stereo.is_empty());
        let problem = build_problem(&recon, &stereo, &mono, RigModel::new(0.2).unwrap()).unwrap();
        assert_eq!(problem.n_stereo_blocks(), 0);
        assert_eq!(problem.n_mono_blocks(), 16, "4 points x 2 frames x 2 sides");
    }

    #[test]
    fn empty_problem_is_an_error() {
        let recon = fixtures::noiseless_recon(2, 4);
        let err = build_problem(&recon, &[], &[], RigModel::new(0.2).unwrap()).unwrap_err();
        assert!(matches!(err, RefineError::EmptyProblem));
    }

    #[test]
    fn noiseless_ground_truth_has_zero_cost() {
        let recon = fixtures::noiseless_recon(3, 6);
        let (stereo, mono) = pair_stereo_features(&recon, 3.0);
        let problem = build_problem(&recon, &stereo, &mono, RigModel::new(0.2).unwrap()).unwrap();
        let eval = evaluate_residuals_and_jacobian(&problem, &problem.initial_state()).unwrap();
        assert!(eval.excluded_blocks.is_empty());
        // Direct residual-evaluation oracle: at ground truth every
        // observation reprojects exactly.
        assert!(eval.residuals.norm_squared() < 1e-12);
    }

    #[test]
    fn zero_residual_state_has_zero_gradient() {
        let recon = fixtures::noiseless_recon(3, 6);
        let (stereo, mono) = pair_stereo_features(&recon, 3.0);
        let problem = build_problem(&recon, &stereo, &mono, RigModel::new(0.2).unwrap()).unwrap();
        let eval = evaluate_residuals_and_jacobian(&problem, &problem.initial_state()).unwrap();
        let gradient = eval.jacobian.transpose() * &eval.residuals;
        assert!(gradient.amax() < 1e-12);
    }

    #[test]
    fn point_behind_camera_is_excluded_not_fatal() {
        let recon = fixtures::noiseless_recon(2, 4);
        let (stereo, mono) = pair_stereo_features(&recon, 3.0);
        let problem = build_problem(&recon, &stereo, &mono, RigModel::new(0.2).unwrap()).unwrap();
        let mut state = problem.initial_state();
        // Move the first point far behind every camera.
        state.points[0] = Point3::new(0.0, 0.0, -100.0);
        let eval = evaluate_residuals_and_jacobian(&problem, &state).unwrap();
        assert!(!eval.excluded_blocks.is_empty());
        assert!(eval.residuals.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_finite_state_is_numerical_failure() {
        let recon = fixtures::noiseless_recon(2, 4);
        let (stereo, mono) = pair_stereo_features(&recon, 3.0);
        let problem = build_problem(&recon, &stereo, &mono, RigModel::new(0.2).unwrap()).unwrap();
        let mut state = problem.initial_state();
        state.points[1] = Point3::new(f64::NAN, 0.0, 1.0);
        assert!(matches!(
            evaluate_residuals_and_jacobian(&problem, &state),
            Err(RefineError::NumericalFailure(_))
        ));
    }

    /// Central finite differences over the free parameters, h = 1e-6.
    fn finite_difference_jacobian(
        problem: &LeastSquaresProblem,
        state: &ProblemState,
    ) -> DMatrix<f64> {
        let h = 1e-6;
        let n = problem.n_free_params();
        let r0 = evaluate_residuals_and_jacobian(problem, state).unwrap().residuals;
        let mut jac = DMatrix::zeros(r0.len(), n);
        for col in 0..n {
            let mut plus = DVector::zeros(n);
            plus[col] = h;
            let mut minus = DVector::zeros(n);
            minus[col] = -h;
            let r_plus = evaluate_residuals_and_jacobian(problem, &problem.retract(state, &plus))
                .unwrap()
                .residuals;
            let r_minus = evaluate_residuals_and_jacobian(problem, &problem.retract(state, &minus))
                .unwrap()
                .residuals;
            jac.set_column(col, &((r_plus - r_minus) / (2.0 * h)));
        }
        jac
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let recon = fixtures::noiseless_recon(3, 5);
        let (stereo, mono) = pair_stereo_features(&recon, 3.0);
        let problem = build_problem(&recon, &stereo, &mono, RigModel::new(0.2).unwrap()).unwrap();
        for _ in 0..10 {
            // Random state near the initialization.
            let mut delta = DVector::zeros(problem.n_free_params());
            for v in delta.iter_mut() {
                *v = (rng.random::<f64>() - 0.5) * 0.1;
            }
            let state = problem.retract(&problem.initial_state(), &delta);
            let eval = evaluate_residuals_and_jacobian(&problem, &state).unwrap();
            if !eval.excluded_blocks.is_empty() {
                continue;
            }
            let fd = finite_difference_jacobian(&problem, &state);
            for i in 0..eval.jacobian.nrows() {
                for j in 0..eval.jacobian.ncols() {
                    let (a, b) = (eval.jacobian[(i, j)], fd[(i, j)]);
                    let scale = a.abs().max(b.abs()).max(1.0);
                    assert!(
                        (a - b).abs() / scale < 1e-5,
                        "J[{i},{j}]: analytic {a} vs finite difference {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn derived_right_pose_sits_one_baseline_away() {
        let recon = fixtures::noiseless_recon(2, 4);
        let left = recon.camera_at(0, crate::tracking::Side::Left).unwrap();
        let right = derive_right_pose(&left.pose, 0.2);
        assert!(((right.center - left.pose.center).norm() - 0.2).abs() < 1e-15);
        assert_eq!(right.rotation, left.pose.rotation);
    }
}
