//! Inverse-kinematics control layer: BFGS descent on the task objective over
//! the free base controls, with waypoint subdivision for trajectory tracking.
//!
//! The objective is `O(u) = 1/2 ||mask .* (X(u) - X*)||^2 + lambda * E(s_hat(u), u)`
//! where `X` is the end-effector pose `(x, y, z, gamma, beta, alpha)` at the
//! converged forward solution and the regularizer keeps the commanded controls
//! near configurations the mechanism can actually realize.

use nalgebra::{DMatrix, DVector, Vector6};
use thiserror::Error;

use crate::assembly::SceneModel;
use crate::constraints::{assemble_c, ControlVector, KinCache};
use crate::forward_solver::{solve_fk, state_sensitivity_full, FkConfig, SolveError};

/// Target end-effector pose in task coordinates `(x, y, z, gamma, beta, alpha)`.
pub type EeTarget = Vector6<f64>;

#[derive(Debug, Clone)]
pub struct IkConfig {
    /// Regularization weight on the constraint energy term.
    pub lambda: f64,
    /// Weight on the secondary posture objective: unmasked end-effector
    /// coordinates are softly pulled toward the target's values (the tracker
    /// fills them with the trajectory's starting pose). Without it the
    /// optimizer is free to wander in the task null space — on 4-DOF scenes
    /// the platform slowly tilts toward singular configurations.
    pub posture_weight: f64,
    /// Convergence threshold on the infinity norm of the free-control gradient.
    pub grad_tol: f64,
    /// Fallback acceptance: when the line search can make no further progress
    /// (typically hovering near a kinematic singularity that is neutral for
    /// the task), the step still counts as converged if the masked task
    /// residual is below this bound.
    pub task_tol: f64,
    /// Outer BFGS iteration budget per sub-target.
    pub max_outer: usize,
    /// Armijo sufficient-decrease coefficient.
    pub c1: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    /// Maximum commanded translation change per tracking sub-step (meters).
    pub trans_step: f64,
    /// Maximum commanded rotation change per tracking sub-step (radians).
    pub rot_step: f64,
    /// When set, waypoints are commanded directly without subdivision.
    pub direct: bool,
    pub fk: FkConfig,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            posture_weight: 1.0,
            grad_tol: 1e-8,
            task_tol: 1e-7,
            max_outer: 200,
            c1: 1e-4,
            shrink: 0.5,
            trans_step: 0.010,
            rot_step: 0.005,
            direct: false,
            // tighter than the standalone default: the objective gradient is
            // only as clean as the converged state under it
            fk: FkConfig { grad_tol: 1e-12, ..FkConfig::default() },
        }
    }
}

const MAX_BACKTRACKS: usize = 50;
/// Curvature floor below which a BFGS pair is discarded.
const CURVATURE_TOL: f64 = 1e-10;

/// Maps the end-effector body's state slice to task order
/// `(x, y, z, gamma, beta, alpha)`.
pub fn ee_state(model: &SceneModel, s: &DVector<f64>) -> EeTarget {
    let b = 6 * model.end_effector;
    Vector6::new(s[b + 3], s[b + 4], s[b + 5], s[b], s[b + 1], s[b + 2])
}

/// State index carrying task coordinate `coord` of the end-effector.
fn ee_state_index(model: &SceneModel, coord: usize) -> usize {
    let b = 6 * model.end_effector;
    if coord < 3 {
        b + 3 + coord
    } else {
        b + coord - 3
    }
}

fn masked_residual(model: &SceneModel, x: &EeTarget, target: &EeTarget) -> EeTarget {
    let mut r = x - target;
    for c in 0..6 {
        if !model.task_mask[c] {
            r[c] = 0.0;
        }
    }
    r
}

/// Task objective at a converged state `s_hat` for controls `u`. Unmasked
/// coordinates of `target` act as a soft posture reference with weight
/// `posture_weight`.
pub fn objective(
    model: &SceneModel,
    s_hat: &DVector<f64>,
    u: &DVector<f64>,
    target: &EeTarget,
    lambda: f64,
    posture_weight: f64,
) -> Result<f64, SolveError> {
    let cache = KinCache::new(s_hat);
    let c = assemble_c(&model.blocks, &cache, u, model.control_dim())?;
    let x = ee_state(model, s_hat);
    let mut task = 0.0;
    for coord in 0..6 {
        let w = if model.task_mask[coord] { 1.0 } else { posture_weight };
        task += w * (x[coord] - target[coord]).powi(2);
    }
    Ok(0.5 * task + lambda * 0.5 * c.norm_squared())
}

/// Total derivative `dO/du` through the implicit forward solution:
/// the task term uses the state sensitivity, the regularizer only its explicit
/// control dependence (the implicit part vanishes at a converged state up to
/// solver tolerance, and near-singular poses make it ill-conditioned anyway).
pub fn objective_gradient(
    model: &SceneModel,
    s_hat: &DVector<f64>,
    u: &DVector<f64>,
    target: &EeTarget,
    lambda: f64,
    posture_weight: f64,
) -> Result<DVector<f64>, SolveError> {
    let sens = state_sensitivity_full(model, s_hat, u)?;
    let x = ee_state(model, s_hat);

    let n_u = model.control_dim();
    let mut g = DVector::zeros(n_u);
    for coord in 0..6 {
        let w = if model.task_mask[coord] { 1.0 } else { posture_weight };
        let wr = w * (x[coord] - target[coord]);
        if wr == 0.0 {
            continue;
        }
        let row = sens.ds_du.row(ee_state_index(model, coord));
        for j in 0..n_u {
            g[j] += wr * row[j];
        }
    }

    g += lambda * (sens.jac_u.transpose() * sens.c);
    Ok(g)
}

/// Weighted end-effector Jacobian `d X / d u` (6 x n_u) through the implicit
/// forward solution, with each row scaled by its objective weight.
fn weighted_task_jacobian(
    model: &SceneModel,
    s_hat: &DVector<f64>,
    u: &DVector<f64>,
    posture_weight: f64,
) -> Result<DMatrix<f64>, SolveError> {
    let sens = state_sensitivity_full(model, s_hat, u)?.ds_du;
    let n_u = model.control_dim();
    let mut j = DMatrix::zeros(6, n_u);
    for coord in 0..6 {
        let w = if model.task_mask[coord] { 1.0 } else { posture_weight };
        let row = sens.row(ee_state_index(model, coord));
        for c in 0..n_u {
            j[(coord, c)] = w.sqrt() * row[c];
        }
    }
    Ok(j)
}

/// Gauss-Newton seed for the inverse BFGS model: `(J^T J + eps I)^{-1}` over
/// the free controls. Falls back to a scaled identity when the task Jacobian
/// is unavailable or too singular to factor.
fn gauss_newton_seed(
    model: &SceneModel,
    s_hat: &DVector<f64>,
    u: &DVector<f64>,
    free: &[usize],
    posture_weight: f64,
    grad_amax: f64,
) -> DMatrix<f64> {
    let nf = free.len();
    let fallback = || DMatrix::identity(nf, nf) / grad_amax.max(1e-12);
    let Ok(j_full) = weighted_task_jacobian(model, s_hat, u, posture_weight) else {
        return fallback();
    };
    let mut j = DMatrix::zeros(6, nf);
    for (c, &jc) in free.iter().enumerate() {
        j.set_column(c, &j_full.column(jc));
    }
    let mut m = j.transpose() * &j;
    // With more free controls than task rows, J^T J is rank deficient; the
    // ridge bounds the step in the redundant directions while staying far
    // below the smallest genuine task curvature.
    let ridge = 1e-4;
    for d in 0..nf {
        m[(d, d)] += ridge;
    }
    match m.cholesky() {
        Some(chol) => chol.inverse(),
        None => fallback(),
    }
}

#[derive(Debug, Error)]
pub enum IkError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("forward solver did not converge while evaluating a control candidate")]
    ForwardDiverged,
}

#[derive(Debug, Clone)]
pub struct IkStep {
    pub u: ControlVector,
    pub s_hat: DVector<f64>,
    pub objective: f64,
    pub grad_norm: f64,
    pub outer_iters: usize,
    pub converged: bool,
}

struct Point {
    u: DVector<f64>,
    s_hat: DVector<f64>,
    obj: f64,
}

/// Drives the free controls toward one end-effector target with BFGS over the
/// implicit objective. Frozen control slots (reduced-scheme headings) never
/// move. Returns the best point found when the iteration budget runs out.
pub fn solve_ik_step(
    model: &SceneModel,
    s_init: &DVector<f64>,
    u_init: &ControlVector,
    target: &EeTarget,
    cfg: &IkConfig,
) -> Result<IkStep, IkError> {
    let free = u_init.free_indices();
    let nf = free.len();

    let probe = |u: &DVector<f64>, s_warm: &DVector<f64>| -> Result<Point, IkError> {
        let report = match solve_fk(model, s_warm, u, &cfg.fk) {
            Ok(r) => r,
            // a trial point the forward solver cannot handle is simply not a
            // usable candidate
            Err(SolveError::SolverBreakdown { .. }) => return Err(IkError::ForwardDiverged),
            Err(e) => return Err(e.into()),
        };
        if !report.converged {
            return Err(IkError::ForwardDiverged);
        }
        // same objective as `objective()`, reusing the constraint energy the
        // forward solve already computed
        let x = ee_state(model, &report.s_hat);
        let mut task = 0.0;
        for coord in 0..6 {
            let w = if model.task_mask[coord] { 1.0 } else { cfg.posture_weight };
            task += w * (x[coord] - target[coord]).powi(2);
        }
        let obj = 0.5 * task + cfg.lambda * report.energy;
        Ok(Point { u: u.clone(), s_hat: report.s_hat, obj })
    };

    let mut cur = probe(&u_init.values, s_init)?;
    let mut b_inv = DMatrix::<f64>::identity(nf, nf);
    let mut g_free = DVector::<f64>::zeros(nf);
    let mut have_grad = false;
    let mut outer = 0usize;
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;

    while outer < cfg.max_outer {
        if !have_grad {
            let g_full =
                objective_gradient(model, &cur.s_hat, &cur.u, target, cfg.lambda, cfg.posture_weight)?;
            for (r, &j) in free.iter().enumerate() {
                g_free[r] = g_full[j];
            }
            if outer == 0 {
                // seed the curvature model with the Gauss-Newton Hessian of
                // the task term; BFGS refines it from there
                b_inv = gauss_newton_seed(
                    model,
                    &cur.s_hat,
                    &cur.u,
                    &free,
                    cfg.posture_weight,
                    g_free.amax(),
                );
            }
            have_grad = true;
        }
        grad_norm = g_free.amax();
        if grad_norm <= cfg.grad_tol {
            converged = true;
            break;
        }
        outer += 1;

        let mut dir = -(&b_inv * &g_free);
        let mut slope = dir.dot(&g_free);
        if slope >= 0.0 {
            // curvature model lost positive definiteness; fall back to steepest
            // descent with a fresh scaled-identity model
            b_inv = DMatrix::identity(nf, nf) / grad_norm.max(1e-12);
            dir = -(&b_inv * &g_free);
            slope = dir.dot(&g_free);
        }

        let mut alpha = 1.0f64;
        let mut accepted: Option<(Point, DVector<f64>, DVector<f64>)> = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut u_try = cur.u.clone();
            for (r, &j) in free.iter().enumerate() {
                u_try[j] += alpha * dir[r];
            }
            match probe(&u_try, &cur.s_hat) {
                Ok(p) if p.obj <= cur.obj + cfg.c1 * alpha * slope => {
                    // gradient at the candidate; a singular Hessian there means
                    // the candidate sits on a degenerate branch — reject it and
                    // keep shrinking
                    match objective_gradient(
                        model,
                        &p.s_hat,
                        &p.u,
                        target,
                        cfg.lambda,
                        cfg.posture_weight,
                    ) {
                        Ok(g_full) => {
                            let step = alpha * &dir;
                            accepted = Some((p, step, g_full));
                            break;
                        }
                        Err(SolveError::SingularSensitivity) => {}
                        Err(e) => return Err(e.into()),
                    }
                }
                // a shorter step may still land in the forward solver's basin
                Ok(_) | Err(IkError::ForwardDiverged) => {}
                Err(e) => return Err(e),
            }
            alpha *= cfg.shrink;
        }

        let Some((next, step, g_full)) = accepted else {
            // line search exhausted: no further descent is available, so judge
            // the point by what the controller actually needs
            let resid = masked_residual(model, &ee_state(model, &cur.s_hat), target);
            converged = resid.amax() <= cfg.task_tol;
            break;
        };

        let mut g_new = DVector::<f64>::zeros(nf);
        for (r, &j) in free.iter().enumerate() {
            g_new[r] = g_full[j];
        }
        let y = &g_new - &g_free;
        let sy = step.dot(&y);
        if sy > CURVATURE_TOL {
            // inverse BFGS update: B <- (I - s y^T / sy) B (I - y s^T / sy) + s s^T / sy
            let rho = 1.0 / sy;
            let by = &b_inv * &y;
            let yby = y.dot(&by);
            b_inv += (sy + yby) * rho * rho * (&step * step.transpose());
            let cross = rho * (&by * step.transpose());
            b_inv -= &cross.transpose() + cross;
        }
        cur = next;
        g_free = g_new;
    }

    if !converged {
        // same fallback when the outer budget runs out
        let resid = masked_residual(model, &ee_state(model, &cur.s_hat), target);
        converged = resid.amax() <= cfg.task_tol;
    }

    let mut u_out = u_init.clone();
    u_out.values = cur.u;
    Ok(IkStep {
        u: u_out,
        s_hat: cur.s_hat,
        objective: cur.obj,
        grad_norm,
        outer_iters: outer,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Converged,
    MaxIters,
    Failed,
}

/// One tracking sub-step: the commanded pose, what the mechanism reached, and
/// the planar poses `(x, y, theta)` of every base.
#[derive(Debug, Clone)]
pub struct TrackRow {
    pub waypoint: usize,
    pub commanded: EeTarget,
    pub achieved: EeTarget,
    /// Control values after this sub-step.
    pub controls: DVector<f64>,
    pub base_poses: Vec<[f64; 3]>,
    pub objective: f64,
    pub status: StepStatus,
}

#[derive(Debug, Clone)]
pub struct TrackReport {
    pub rows: Vec<TrackRow>,
    /// Root-mean-square commanded-vs-achieved error per task coordinate,
    /// over all recorded sub-steps; unmasked coordinates are zero.
    pub rmse: [f64; 6],
    pub final_state: DVector<f64>,
    pub final_controls: ControlVector,
}

fn base_poses(model: &SceneModel, s: &DVector<f64>) -> Vec<[f64; 3]> {
    model
        .mobile_bases
        .iter()
        .map(|base| {
            let b = 6 * base.body;
            [s[b + 3], s[b + 4], s[b]]
        })
        .collect()
}

/// Tracks a sequence of end-effector waypoints. Each waypoint is subdivided so
/// consecutive commanded poses differ by at most `trans_step` in translation
/// and `rot_step` per angle (unless `direct` is set). Failed sub-steps are
/// recorded and tracking resumes from the last good `(s, u)` pair.
pub fn track_waypoints(
    model: &SceneModel,
    s_init: &DVector<f64>,
    u_init: &ControlVector,
    targets: &[EeTarget],
    cfg: &IkConfig,
) -> Result<TrackReport, IkError> {
    let mut s = s_init.clone();
    let mut u = u_init.clone();
    let mut rows = Vec::new();
    // posture reference for the unmasked coordinates: the pose the mechanism
    // assembled into
    let posture_ref = ee_state(model, s_init);

    for (w, waypoint) in targets.iter().enumerate() {
        let x_cur = ee_state(model, &s);
        let delta = masked_residual(model, waypoint, &x_cur);
        let n_sub = if cfg.direct {
            1
        } else {
            let trans = delta.rows(0, 3).amax();
            let rot = delta.rows(3, 3).amax();
            ((trans / cfg.trans_step).ceil().max((rot / cfg.rot_step).ceil()) as usize).max(1)
        };

        for i in 1..=n_sub {
            let frac = i as f64 / n_sub as f64;
            let mut sub = x_cur + frac * delta;
            for c in 0..6 {
                if !model.task_mask[c] {
                    sub[c] = posture_ref[c];
                }
            }

            match solve_ik_step(model, &s, &u, &sub, cfg) {
                Ok(step) => {
                    let achieved = ee_state(model, &step.s_hat);
                    rows.push(TrackRow {
                        waypoint: w,
                        commanded: sub,
                        achieved,
                        controls: step.u.values.clone(),
                        base_poses: base_poses(model, &step.s_hat),
                        objective: step.objective,
                        status: if step.converged {
                            StepStatus::Converged
                        } else {
                            StepStatus::MaxIters
                        },
                    });
                    s = step.s_hat;
                    u = step.u;
                }
                Err(IkError::ForwardDiverged) => {
                    rows.push(TrackRow {
                        waypoint: w,
                        commanded: sub,
                        achieved: ee_state(model, &s),
                        controls: u.values.clone(),
                        base_poses: base_poses(model, &s),
                        objective: f64::NAN,
                        status: StepStatus::Failed,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    }

    let mut rmse = [0.0f64; 6];
    if !rows.is_empty() {
        for row in &rows {
            for c in 0..6 {
                if model.task_mask[c] {
                    let d = row.achieved[c] - row.commanded[c];
                    rmse[c] += d * d;
                }
            }
        }
        for v in &mut rmse {
            *v = (*v / rows.len() as f64).sqrt();
        }
    }

    Ok(TrackReport { rows, rmse, final_state: s, final_controls: u })
}
