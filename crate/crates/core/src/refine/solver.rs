use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::{evaluate_block, BlockEval};
use super::{LeastSquaresProblem, ProblemState, RefineConfig, RefineError, ResidualBlock};
use crate::recon::Reconstruction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceReason {
    GradientBelowTolerance,
    CostDecreaseBelowTolerance,
    /// No damping value produced a cost-decreasing step.
    StepStalled,
    MaxIterations,
}

/// Outcome of a refinement solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Accepted Levenberg-Marquardt steps.
    pub iterations: usize,
    pub reason: ConvergenceReason,
    /// False when the solve hit max_iterations or stalled with the gradient
    /// still above tolerance; the best iterate is returned regardless.
    pub converged: bool,
    /// Robust cost after every accepted step, starting at the initial cost.
    /// Non-increasing by construction.
    pub cost_history: Vec<f64>,
    /// Unweighted reprojection RMS over all residual components, pixels.
    pub final_rms_px: f64,
    pub stereo_rms_px: f64,
    pub mono_rms_px: f64,
    /// Residual blocks excluded in the final evaluation (behind camera).
    pub excluded_blocks: usize,
    /// False when the problem contains no stereo residuals, leaving the
    /// scale unconstrained.
    pub scale_constrained: bool,
    pub n_frames: usize,
    pub n_points: usize,
    pub n_stereo_blocks: usize,
    pub n_mono_blocks: usize,
    pub baseline: f64,
}

struct Linearization {
    cost: f64,
    gradient_inf: f64,
    hessian: DMatrix<f64>,
    gradient: DVector<f64>,
}

/// Robust weight and cost of one block under a Huber loss of the given
/// width: rho(s) = s for s <= w^2, 2w*sqrt(s) - w^2 beyond.
fn huber(s: f64, width: Option<f64>) -> (f64, f64) {
    match width {
        Some(w) if s > w * w => {
            let norm = s.sqrt();
            (2.0 * w * norm - w * w, w / norm)
        }
        _ => (s, 1.0),
    }
}

/// Robust cost at a state: 0.5 * sum rho(|r_block|^2) over valid blocks.
fn cost_at(problem: &LeastSquaresProblem, state: &ProblemState, config: &RefineConfig) -> f64 {
    let total: f64 = problem
        .blocks()
        .par_iter()
        .map(|block| match evaluate_block(problem, state, block) {
            Some(eval) => {
                let s: f64 = eval.r[..eval.dim].iter().map(|v| v * v).sum();
                huber(s, config.huber_width).0
            }
            None => 0.0,
        })
        .sum();
    0.5 * total
}

/// Builds the normal equations by accumulating the weighted block outer
/// products; block evaluation is pure and runs in parallel, accumulation is
/// sequential in block order for determinism.
fn linearize(
    problem: &LeastSquaresProblem,
    state: &ProblemState,
    config: &RefineConfig,
) -> Result<Linearization, RefineError> {
    let n = problem.n_free_params();
    let evals: Vec<Option<BlockEval>> = problem
        .blocks()
        .par_iter()
        .map(|block| evaluate_block(problem, state, block))
        .collect();

    let mut hessian = DMatrix::zeros(n, n);
    let mut gradient = DVector::zeros(n);
    let mut cost = 0.0;

    for (idx, eval) in evals.iter().enumerate() {
        let Some(eval) = eval else {
            continue;
        };
        let s: f64 = eval.r[..eval.dim].iter().map(|v| v * v).sum();
        if !s.is_finite() {
            return Err(RefineError::NumericalFailure("non-finite residual".to_string()));
        }
        let (rho, weight) = huber(s, config.huber_width);
        cost += 0.5 * rho;

        let (frame_idx, point_idx) = match problem.blocks()[idx] {
            ResidualBlock::Stereo { frame, point, .. } | ResidualBlock::Mono { frame, point, .. } => {
                (frame, point)
            }
        };
        let pose_off = problem.pose_offset(frame_idx);
        let point_off = problem.point_offset(point_idx);

        // Column indices this block touches: 6 pose params (unless
        // anchored) and 3 point params.
        let mut cols: Vec<(usize, usize)> = Vec::with_capacity(9); // (param col, local col)
        if let Some(off) = pose_off {
            for c in 0..6 {
                cols.push((off + c, c));
            }
        }
        for c in 0..3 {
            cols.push((point_off + c, 6 + c));
        }
        // Local 9-wide Jacobian rows: pose columns then point columns.
        let local = |row: usize, local_col: usize| -> f64 {
            if local_col < 6 {
                eval.j_pose[row][local_col]
            } else {
                eval.j_point[row][local_col - 6]
            }
        };
        for &(col_a, loc_a) in &cols {
            let mut g = 0.0;
            for row in 0..eval.dim {
                g += local(row, loc_a) * eval.r[row];
            }
            gradient[col_a] += weight * g;
            for &(col_b, loc_b) in &cols {
                if col_b < col_a {
                    continue;
                }
                let mut h = 0.0;
                for row in 0..eval.dim {
                    h += local(row, loc_a) * local(row, loc_b);
                }
                hessian[(col_a, col_b)] += weight * h;
                if col_a != col_b {
                    hessian[(col_b, col_a)] += weight * h;
                }
            }
        }
    }

    if !cost.is_finite() {
        return Err(RefineError::NumericalFailure("non-finite cost".to_string()));
    }
    let gradient_inf = gradient.amax();
    Ok(Linearization { cost, gradient_inf, hessian, gradient })
}

/// Levenberg-Marquardt on the robust cost. Accepted steps never increase
/// the cost; terminates on small gradient, small relative cost decrease or
/// `max_iterations`. Returns the refined reconstruction (right cameras
/// re-derived at exactly the rig baseline) plus the report.
pub fn optimize(
    problem: &LeastSquaresProblem,
    config: &RefineConfig,
) -> Result<(Reconstruction, RefinementReport), RefineError> {
    let mut state = problem.initial_state();
    let mut lin = linearize(problem, &state, config)?;
    let mut lambda = config.initial_lambda;
    let mut cost_history = vec![lin.cost];
    let initial_cost = lin.cost;
    let mut iterations = 0usize;
    let mut reason = ConvergenceReason::MaxIterations;

    for _ in 0..config.max_iterations {
        if lin.gradient_inf < config.gradient_tolerance {
            reason = ConvergenceReason::GradientBelowTolerance;
            break;
        }

        let mut accepted: Option<(ProblemState, f64)> = None;
        while lambda <= 1e12 {
            let mut damped = lin.hessian.clone();
            let max_diag = (0..damped.nrows()).map(|i| damped[(i, i)]).fold(0.0f64, f64::max);
            let floor = (max_diag * 1e-12).max(1e-12);
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * damped[(i, i)].max(floor);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&lin.gradient));
            let candidate = problem.retract(&state, &delta);
            let candidate_cost = cost_at(problem, &candidate, config);
            if candidate_cost.is_finite() && candidate_cost < lin.cost {
                accepted = Some((candidate, candidate_cost));
                break;
            }
            lambda *= 10.0;
        }

        let Some((next_state, next_cost)) = accepted else {
            reason = ConvergenceReason::StepStalled;
            break;
        };
        let relative_decrease = (lin.cost - next_cost) / lin.cost.max(f64::MIN_POSITIVE);
        state = next_state;
        lin = linearize(problem, &state, config)?;
        debug_assert!((lin.cost - next_cost).abs() <= 1e-9 * next_cost.max(1.0));
        cost_history.push(next_cost);
        iterations += 1;
        lambda = (lambda / 3.0).max(1e-12);
        if relative_decrease < config.cost_tolerance {
            reason = ConvergenceReason::CostDecreaseBelowTolerance;
            break;
        }
    }

    let converged = matches!(
        reason,
        ConvergenceReason::GradientBelowTolerance | ConvergenceReason::CostDecreaseBelowTolerance
    );

    // Unweighted reprojection statistics at the solution.
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut stereo_sq = 0.0;
    let mut stereo_n = 0usize;
    let mut mono_sq = 0.0;
    let mut mono_n = 0usize;
    let mut excluded = 0usize;
    for block in problem.blocks() {
        match evaluate_block(problem, &state, block) {
            Some(eval) => {
                let s: f64 = eval.r[..eval.dim].iter().map(|v| v * v).sum();
                sum_sq += s;
                count += eval.dim;
                match block {
                    ResidualBlock::Stereo { .. } => {
                        stereo_sq += s;
                        stereo_n += eval.dim;
                    }
                    ResidualBlock::Mono { .. } => {
                        mono_sq += s;
                        mono_n += eval.dim;
                    }
                }
            }
            None => excluded += 1,
        }
    }
    let rms = |sq: f64, n: usize| if n == 0 { 0.0 } else { (sq / n as f64).sqrt() };

    let report = RefinementReport {
        initial_cost,
        final_cost: *cost_history.last().expect("history starts with the initial cost"),
        iterations,
        reason,
        converged,
        cost_history,
        final_rms_px: rms(sum_sq, count),
        stereo_rms_px: rms(stereo_sq, stereo_n),
        mono_rms_px: rms(mono_sq, mono_n),
        excluded_blocks: excluded,
        scale_constrained: problem.n_stereo_blocks() > 0,
        n_frames: problem.n_frames(),
        n_points: problem.n_points(),
        n_stereo_blocks: problem.n_stereo_blocks(),
        n_mono_blocks: problem.n_mono_blocks(),
        baseline: problem.rig().baseline,
    };
    Ok((problem.export_reconstruction(&state), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refine::{build_problem, pair_stereo_features, RigModel};
    use crate::synth::fixtures;

    fn solve(recon: &Reconstruction, config: &RefineConfig) -> (Reconstruction, RefinementReport) {
        let (stereo, mono) = pair_stereo_features(recon, config.y_tolerance);
        let rig = RigModel::new(config.nominal_baseline).unwrap();
        let problem = build_problem(recon, &stereo, &mono, rig).unwrap();
        optimize(&problem, config).unwrap()
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let recon = fixtures::noiseless_recon(4, 8);
        let config = RefineConfig { nominal_baseline: 0.2, ..RefineConfig::default() };
        let (_, report) = solve(&recon, &config);
        assert!(report.iterations <= 2, "converged in {} iterations", report.iterations);
        assert!(report.final_cost <= report.initial_cost);
        assert!(report.converged);
        assert!(report.final_cost < 1e-12);
    }

    #[test]
    fn accepted_costs_are_non_increasing() {
        let recon = fixtures::perturbed_recon(5, 10, 0.02, 42);
        let config = RefineConfig { nominal_baseline: 0.2, ..RefineConfig::default() };
        let (_, report) = solve(&recon, &config);
        assert!(report.cost_history.windows(2).all(|w| w[1] <= w[0]));
        assert!(report.final_cost < report.initial_cost);
    }

    #[test]
    fn refined_baselines_equal_rig_baseline_exactly() {
        let recon = fixtures::perturbed_recon(4, 8, 0.01, 7);
        let config = RefineConfig { nominal_baseline: 0.2, ..RefineConfig::default() };
        let (refined, _) = solve(&recon, &config);
        for frame in refined.stereo_frames() {
            let l = refined.camera_at(frame, crate::tracking::Side::Left).unwrap();
            let r = refined.camera_at(frame, crate::tracking::Side::Right).unwrap();
            // Exact by construction: the right center is left + baseline
            // times a unit row of an orthonormal matrix.
            let baseline = (l.pose.center - r.pose.center).norm();
            assert!((baseline - 0.2).abs() < 1e-14);
            assert_eq!(l.pose.rotation, r.pose.rotation, "stereo pair shares one rotation");
        }
    }

    #[test]
    fn refinement_preserves_observations() {
        let recon = fixtures::perturbed_recon(3, 6, 0.01, 3);
        let config = RefineConfig { nominal_baseline: 0.2, ..RefineConfig::default() };
        let (refined, _) = solve(&recon, &config);
        assert_eq!(refined.points.len(), recon.points.len());
        for (a, b) in recon.points.iter().zip(&refined.points) {
            assert_eq!(a.observations, b.observations);
        }
    }

    #[test]
    fn noisy_problem_recovers_small_reprojection_rms() {
        // Ground truth poses perturbed, pixel noise 0.5 px: the solve must
        // pull the reprojection RMS down to the noise floor.
        let recon = fixtures::noisy_recon(6, 16, 0.5, 0.02, 11);
        let config = RefineConfig { nominal_baseline: 0.2, ..RefineConfig::default() };
        let (_, report) = solve(&recon, &config);
        assert!(report.converged || report.iterations > 0);
        assert!(
            report.final_rms_px <= 0.6,
            "reprojection RMS {} exceeds 1.2x the 0.5 px noise",
            report.final_rms_px
        );
    }

    #[test]
    fn huber_cost_never_exceeds_quadratic_cost() {
        let recon = fixtures::noisy_recon(4, 10, 1.0, 0.05, 5);
        let (stereo, mono) = pair_stereo_features(&recon, 3.0);
        let rig = RigModel::new(0.2).unwrap();
        let problem = build_problem(&recon, &stereo, &mono, rig).unwrap();
        let state = problem.initial_state();
        let huber_config = RefineConfig { huber_width: Some(2.0), ..RefineConfig::default() };
        let quad_config = RefineConfig { huber_width: None, ..RefineConfig::default() };
        let huber_cost = cost_at(&problem, &state, &huber_config);
        let quad_cost = cost_at(&problem, &state, &quad_config);
        assert!(huber_cost <= quad_cost + 1e-12);
    }

    #[test]
    fn mono_only_solve_flags_unconstrained_scale() {
        let recon = fixtures::noiseless_recon(3, 6);
        let (stereo, mono) = pair_stereo_features(&recon, 0.0);
        assert!(stereo.is_empty());
        let rig = RigModel::new(0.2).unwrap();
        let problem = build_problem(&recon, &stereo, &mono, rig).unwrap();
        let (_, report) = optimize(&problem, &RefineConfig::default()).unwrap();
        assert!(!report.scale_constrained);
    }
}
