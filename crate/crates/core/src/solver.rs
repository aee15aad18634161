//! Extrinsic refinement from flow-corrected 2D-3D correspondences.
//!
//! The solver minimizes the weighted squared reprojection error
//!
//! ```text
//! (1/2) sum_i w_i || p_hat_i - pi(K, T_init * dT * P_i) ||^2
//! ```
//!
//! over `dT` in SE(3) with Gauss-Newton, iterating right-multiplicative
//! twist increments `dT <- dT * exp(step)` from the identity. During
//! inference the gated variant drops correspondences whose normalized
//! uncertainty exceeds a threshold and solves the remaining set unweighted.
//!
//! The converged estimate is differentiable with respect to the 2D targets:
//! [`pose_jacobian_wrt_targets`] applies the implicit-function theorem to
//! the stationarity condition, using the Gauss-Newton Hessian at the
//! solution, and [`pose_jacobian_fd`] provides the independent re-solve
//! oracle used by `gradcheck`.

use crate::camera::{
    pixel_jacobian_wrt_camera_point, rasterize_depth, DepthImage,
    PinholeIntrinsics, PointCloud, MIN_DEPTH,
};
use crate::flow::{flow_for_depth, FlowField, UncertaintyScale};
use crate::geometry::jacobian::se3_right_jacobian_inv;
use crate::geometry::{
    hat, make_initial_extrinsic, sample_perturbation, GeometryError, PerturbRange, SE3Transform,
    Twist, Vec3,
};
use nalgebra::{DMatrix, Matrix2x6, Matrix6, Vector2, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error("need at least {required} usable correspondences, have {available}")]
    InsufficientCorrespondences { available: usize, required: usize },
    #[error("normal equations are singular even after damping")]
    SingularNormalEquations,
    #[error("Gauss-Newton Hessian is singular at the solution")]
    SingularHessian,
    #[error("solve did not converge")]
    NotConverged,
    #[error("gating expects a normalized uncertainty field")]
    QualityScaleNotNormalized,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// One 3D point paired with its flow-corrected 2D target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// LiDAR-frame point.
    pub point: Vec3,
    /// Flow-corrected pixel target.
    pub target: Vector2<f64>,
    /// Precision weight (1/pixels^2).
    pub weight: f64,
    /// Depth-image pixel this correspondence came from.
    pub source_pixel: (usize, usize),
}

/// Correspondences feeding one solve.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    items: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(items: Vec<Correspondence>) -> Self {
        Self { items }
    }

    pub fn items(&self) -> &[Correspondence] {
        &self.items
    }

    pub fn items_mut(&mut self) -> &mut [Correspondence] {
        &mut self.items
    }

    pub fn push(&mut self, c: Correspondence) {
        self.items.push(c);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Builds correspondences from a depth image and the flow attached to it:
/// for every occupied pixel with valid flow, the target is the stored
/// sub-pixel projection plus the flow vector, the weight is the pixel's
/// precision, and the 3D point is the pixel's winning cloud point.
///
/// The depth image must come from the same initial extrinsic the flow was
/// computed against.
pub fn correspondences_from_flow(
    depth: &DepthImage,
    cloud: &PointCloud,
    flow: &FlowField,
    _k: &PinholeIntrinsics,
) -> CorrespondenceSet {
    let mut items = Vec::new();
    for (x, y, sample) in depth.occupied() {
        let Some((fu, fv)) = flow.flow_at(x, y) else {
            continue;
        };
        let q = flow.q_at(x, y).expect("valid pixel has q");
        items.push(Correspondence {
            point: cloud.points()[sample.point_index as usize],
            target: Vector2::new(sample.u + fu, sample.v + fv),
            weight: q,
            source_pixel: (x, y),
        });
    }
    CorrespondenceSet::new(items)
}

/// Gauss-Newton controls. Defaults: 50 iterations, step tolerance 1e-10,
/// Tikhonov damping 1e-9 on the normal equations, gate threshold 0.5.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub max_iterations: usize,
    pub convergence_tol: f64,
    pub damping: f64,
    pub gate_threshold: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: 1e-10,
            damping: 1e-9,
            gate_threshold: 0.5,
        }
    }
}

/// Outcome of one refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    /// Refinement `dT*`; the predicted extrinsic is `T_init * dT*`.
    pub delta: SE3Transform,
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
    /// Correspondences that entered the final normal equations.
    pub inlier_count: usize,
}

impl SolveReport {
    pub fn predicted_extrinsic(&self, t_init: &SE3Transform) -> SE3Transform {
        t_init.compose(&self.delta)
    }
}

const MIN_CORRESPONDENCES: usize = 3;

struct NormalEquations {
    h: Matrix6<f64>,
    g: Vector6<f64>,
    cost: f64,
    used: usize,
}

// Residual Jacobian of one correspondence at the current estimate, with the
// right-increment parameterization dT * exp(step).
fn residual_jacobian(
    current: &SE3Transform,
    k: &PinholeIntrinsics,
    point: &Vec3,
) -> Option<(Vector2<f64>, Matrix2x6<f64>)> {
    let cam = current.transform_point(point);
    if cam.z <= MIN_DEPTH {
        return None;
    }
    let proj = Vector2::new(k.fx * (cam.x / cam.z) + k.cx, k.fy * (cam.y / cam.z) + k.cy);
    let j_pi = pixel_jacobian_wrt_camera_point(k, &cam).expect("depth already checked");
    let d_rho = -j_pi * current.rotation();
    let d_phi = j_pi * current.rotation() * hat(point);
    let mut j = Matrix2x6::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_rho);
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_phi);
    Some((proj, j))
}

fn accumulate(
    t_init: &SE3Transform,
    delta: &SE3Transform,
    items: &[Correspondence],
    k: &PinholeIntrinsics,
) -> NormalEquations {
    let current = t_init.compose(delta);
    let mut h = Matrix6::zeros();
    let mut g = Vector6::zeros();
    let mut cost = 0.0;
    let mut used = 0;
    for c in items {
        let Some((proj, j)) = residual_jacobian(&current, k, &c.point) else {
            continue;
        };
        let r = c.target - proj;
        h += c.weight * j.transpose() * j;
        g += c.weight * j.transpose() * r;
        cost += 0.5 * c.weight * r.norm_squared();
        used += 1;
    }
    NormalEquations { h, g, cost, used }
}

fn run_gauss_newton(
    t_init: &SE3Transform,
    items: &[Correspondence],
    k: &PinholeIntrinsics,
    opts: &SolveOptions,
) -> Result<SolveReport, SolverError> {
    if items.len() < MIN_CORRESPONDENCES {
        return Err(SolverError::InsufficientCorrespondences {
            available: items.len(),
            required: MIN_CORRESPONDENCES,
        });
    }
    let mut delta = SE3Transform::identity();
    let mut converged = false;
    let mut iterations = 0;
    let damping = Matrix6::identity() * opts.damping;
    while iterations < opts.max_iterations {
        let eq = accumulate(t_init, &delta, items, k);
        if eq.used < MIN_CORRESPONDENCES {
            return Err(SolverError::InsufficientCorrespondences {
                available: eq.used,
                required: MIN_CORRESPONDENCES,
            });
        }
        let chol = nalgebra::Cholesky::new(eq.h + damping)
            .ok_or(SolverError::SingularNormalEquations)?;
        let step = chol.solve(&-eq.g);
        delta = delta.compose(&SE3Transform::exp(&Twist::from_vector(&step)));
        iterations += 1;
        if step.amax() < opts.convergence_tol {
            converged = true;
            break;
        }
    }
    let final_eq = accumulate(t_init, &delta, items, k);
    Ok(SolveReport {
        delta,
        iterations,
        final_cost: final_eq.cost,
        converged,
        inlier_count: final_eq.used,
    })
}

/// Precision-weighted Gauss-Newton refinement using every correspondence.
pub fn solve_weighted(
    t_init: &SE3Transform,
    cs: &CorrespondenceSet,
    k: &PinholeIntrinsics,
    opts: &SolveOptions,
) -> Result<SolveReport, SolverError> {
    run_gauss_newton(t_init, cs.items(), k, opts)
}

/// Gated inference solve: drops correspondences whose normalized
/// uncertainty is at or above `threshold`, then runs an unweighted solve on
/// the survivors.
pub fn solve_gated(
    t_init: &SE3Transform,
    cs: &CorrespondenceSet,
    k: &PinholeIntrinsics,
    normalized_q: &FlowField,
    threshold: f64,
    opts: &SolveOptions,
) -> Result<SolveReport, SolverError> {
    if normalized_q.scale() != UncertaintyScale::NormalizedUncertainty {
        return Err(SolverError::QualityScaleNotNormalized);
    }
    let kept: Vec<Correspondence> = cs
        .items()
        .iter()
        .filter(|c| {
            normalized_q
                .q_at(c.source_pixel.0, c.source_pixel.1)
                .is_some_and(|q| q < threshold)
        })
        .map(|c| Correspondence { weight: 1.0, ..*c })
        .collect();
    run_gauss_newton(t_init, &kept, k, opts)
}

/// Derivative of the converged twist `log(dT*)` with respect to every
/// target coordinate, as a 6 x 2M matrix (columns 2i, 2i+1 belong to
/// correspondence i).
///
/// By the implicit-function theorem on the stationarity condition, the
/// column block of correspondence i is `-Jr^-1(xi*) H^-1 (w_i J_i^T)`, with
/// `H` the (damped) Gauss-Newton Hessian at the solution and `Jr` the SE(3)
/// right Jacobian translating local increments into changes of `log(dT*)`.
/// Weights and gating are treated as constants.
pub fn pose_jacobian_wrt_targets(
    report: &SolveReport,
    cs: &CorrespondenceSet,
    k: &PinholeIntrinsics,
    t_init: &SE3Transform,
    opts: &SolveOptions,
) -> Result<DMatrix<f64>, SolverError> {
    if !report.converged {
        return Err(SolverError::NotConverged);
    }
    let current = t_init.compose(&report.delta);
    let mut h = Matrix6::zeros();
    let mut blocks = Vec::with_capacity(cs.len());
    for c in cs.items() {
        let jac = residual_jacobian(&current, k, &c.point);
        if let Some((_, j)) = jac {
            h += c.weight * j.transpose() * j;
        }
        blocks.push(jac.map(|(_, j)| j));
    }
    let chol = nalgebra::Cholesky::new(h + Matrix6::identity() * opts.damping)
        .ok_or(SolverError::SingularHessian)?;
    let xi_star = report.delta.log()?;
    let jr_inv = se3_right_jacobian_inv(&xi_star);
    let mut out = DMatrix::zeros(6, 2 * cs.len());
    for (i, (c, block)) in cs.items().iter().zip(&blocks).enumerate() {
        let Some(j) = block else {
            continue; // behind-camera point contributes nothing
        };
        let sens = jr_inv * chol.solve(&(j.transpose() * c.weight));
        out.view_mut((0, 2 * i), (6, 2)).copy_from(&(-sens));
    }
    Ok(out)
}

/// Central-difference oracle for [`pose_jacobian_wrt_targets`]: perturbs
/// each target coordinate by `step` pixels and re-solves from scratch.
pub fn pose_jacobian_fd(
    t_init: &SE3Transform,
    cs: &CorrespondenceSet,
    k: &PinholeIntrinsics,
    opts: &SolveOptions,
    step: f64,
) -> Result<DMatrix<f64>, SolverError> {
    let solve_log = |set: &CorrespondenceSet| -> Result<Vector6<f64>, SolverError> {
        let report = solve_weighted(t_init, set, k, opts)?;
        if !report.converged {
            return Err(SolverError::NotConverged);
        }
        Ok(report.delta.log()?.as_vector())
    };
    let mut out = DMatrix::zeros(6, 2 * cs.len());
    for i in 0..cs.len() {
        for coord in 0..2 {
            let mut plus = cs.clone();
            plus.items_mut()[i].target[coord] += step;
            let mut minus = cs.clone();
            minus.items_mut()[i].target[coord] -= step;
            let diff = (solve_log(&plus)? - solve_log(&minus)?) / (2.0 * step);
            out.view_mut((0, 2 * i + coord), (6, 1)).copy_from(&diff);
        }
    }
    Ok(out)
}

/// Residual-motion loss: L1 norm of `log((T_init dT)^-1 T_gt)`.
pub fn geodesic_loss(
    t_init: &SE3Transform,
    d_t: &SE3Transform,
    t_gt: &SE3Transform,
) -> Result<f64, SolverError> {
    let residual = t_init.compose(d_t).inverse().compose(t_gt);
    Ok(residual.log()?.norm_l1())
}

/// Weighted total: `lambda_f * l_f + lambda_g * l_g`.
pub fn total_loss(l_f: f64, l_g: f64, lambda_f: f64, lambda_g: f64) -> f64 {
    debug_assert!(lambda_f >= 0.0 && lambda_g >= 0.0);
    lambda_f * l_f + lambda_g * l_g
}

/// Summary of a gradient check over seeded instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckReport {
    pub instances: usize,
    /// Largest `max|J_ift - J_fd| / max|J_fd|` over all instances.
    pub max_rel_error: f64,
}

impl GradcheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Relative discrepancy between two Jacobians: largest entry difference
/// normalized by the largest reference entry.
pub fn jacobian_rel_error(analytic: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.abs().max().max(1e-300);
    (analytic - reference).abs().max() / scale
}

/// One self-contained solvable instance for gradient checking.
pub fn gradcheck_instance(
    seed: u64,
) -> (SE3Transform, CorrespondenceSet, PinholeIntrinsics) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = PinholeIntrinsics::new(150.0, 150.0, 80.0, 60.0, 160, 120).unwrap();
    let t_gt = crate::camera::kitti_like_extrinsic().compose(&SE3Transform::exp(&Twist::new(
        Vec3::new(
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
        ),
        Vec3::new(
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.05..0.05),
        ),
    )));
    let range = PerturbRange::new(0.10, 5.0_f64.to_radians()).unwrap();
    let d_true = sample_perturbation(&range, &mut rng);
    let t_init = make_initial_extrinsic(&t_gt, &d_true);
    // Points sampled in the initial camera's frustum.
    let inv_init = t_init.inverse();
    let points: Vec<Vec3> = (0..14)
        .map(|_| {
            let u = rng.random_range(10.0..150.0);
            let v = rng.random_range(10.0..110.0);
            let z = rng.random_range(3.0..15.0);
            inv_init.transform_point(&Vec3::new(
                (u - k.cx) * z / k.fx,
                (v - k.cy) * z / k.fy,
                z,
            ))
        })
        .collect();
    let cloud = PointCloud::new(points).unwrap();
    let depth = rasterize_depth(&cloud, &t_init, &k);
    let flow = flow_for_depth(&depth, &cloud, &t_gt, &k);
    let mut cs = correspondences_from_flow(&depth, &cloud, &flow, &k);
    for c in cs.items_mut() {
        c.weight = rng.random_range(0.5..2.0);
    }
    (t_init, cs, k)
}

/// Runs [`pose_jacobian_wrt_targets`] against the central-difference oracle
/// on `n_instances` seeded instances (FD step 1e-4 px) and reports the worst
/// relative discrepancy. Fails if any instance does not converge.
pub fn gradcheck_run(seed: u64, n_instances: usize) -> Result<GradcheckReport, SolverError> {
    let opts = SolveOptions {
        convergence_tol: 1e-12,
        max_iterations: 100,
        ..SolveOptions::default()
    };
    let mut max_rel_error: f64 = 0.0;
    for i in 0..n_instances {
        let (t_init, cs, k) = gradcheck_instance(seed.wrapping_add(i as u64));
        let report = solve_weighted(&t_init, &cs, &k, &opts)?;
        if !report.converged {
            return Err(SolverError::NotConverged);
        }
        let analytic = pose_jacobian_wrt_targets(&report, &cs, &k, &t_init, &opts)?;
        let oracle = pose_jacobian_fd(&t_init, &cs, &k, &opts, 1e-4)?;
        max_rel_error = max_rel_error.max(jacobian_rel_error(&analytic, &oracle));
    }
    Ok(GradcheckReport {
        instances: n_instances,
        max_rel_error,
    })
}
