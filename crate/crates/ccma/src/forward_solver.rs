//! Forward kinematics: minimize the constraint energy `E = 1/2 C^T C` over the
//! system state with a damped Newton method, and expose the energy derivatives
//! and the implicit state-sensitivity solve `ds/du = -(dG/ds)^-1 dG/du`.

use nalgebra::{DMatrix, DVector};
use std::time::Instant;
use thiserror::Error;

use crate::assembly::SceneModel;
use crate::constraints::{evaluate, ConstraintError, KinCache, SecondDerivs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HessianMode {
    /// `J^T J + sum_r C_r d2C_r/ds2` (exact Newton).
    Full,
    /// `J^T J` only.
    GaussNewton,
}

#[derive(Debug, Clone)]
pub struct FkConfig {
    /// Convergence threshold on the infinity norm of dE/ds.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Initial Levenberg diagonal damping; x10 on rejected steps, /10 on
    /// accepted ones.
    pub lm_init: f64,
    pub hessian_mode: HessianMode,
}

impl Default for FkConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iters: 100,
            lm_init: 1e-9,
            hessian_mode: HessianMode::Full,
        }
    }
}

const LM_MIN: f64 = 1e-12;
const LM_MAX: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub s_hat: DVector<f64>,
    pub energy: f64,
    pub grad_norm: f64,
    pub iters: usize,
    pub wall_time: f64,
    pub converged: bool,
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("damped Newton system stayed singular up to damping {damping:.1e}")]
    SolverBreakdown { damping: f64 },
    #[error("energy Hessian is singular at the converged state (kinematic singularity)")]
    SingularSensitivity,
}

/// `E = 1/2 ||C(s, u)||^2`
pub fn energy(model: &SceneModel, s: &DVector<f64>, u: &DVector<f64>) -> Result<f64, SolveError> {
    let cache = KinCache::new(s);
    let ev = evaluate(&model.blocks, &cache, u, model.control_dim(), false, false, false)?;
    Ok(0.5 * ev.c.norm_squared())
}

/// `G = dE/ds = J^T C`
pub fn energy_gradient(
    model: &SceneModel,
    s: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DVector<f64>, SolveError> {
    let cache = KinCache::new(s);
    let ev = evaluate(&model.blocks, &cache, u, model.control_dim(), true, false, false)?;
    Ok(ev.jac_s.unwrap().transpose() * ev.c)
}

fn hessian_from_parts(
    c: &DVector<f64>,
    j: &DMatrix<f64>,
    sd: Option<&SecondDerivs>,
) -> DMatrix<f64> {
    let mut h = j.transpose() * j;
    if let Some(sd) = sd {
        for (r, entries) in sd.ss.iter().enumerate() {
            let w = c[r];
            if w == 0.0 {
                continue;
            }
            for &(i, k, v) in entries {
                h[(i, k)] += w * v;
                if i != k {
                    h[(k, i)] += w * v;
                }
            }
        }
    }
    h
}

fn mixed_from_parts(
    c: &DVector<f64>,
    j: &DMatrix<f64>,
    ju: &DMatrix<f64>,
    sd: &SecondDerivs,
) -> DMatrix<f64> {
    let mut m = j.transpose() * ju;
    for (r, entries) in sd.su.iter().enumerate() {
        let w = c[r];
        if w == 0.0 {
            continue;
        }
        for &(i, k, v) in entries {
            m[(i, k)] += w * v;
        }
    }
    m
}

/// `d2E/ds2` in the requested mode.
pub fn energy_hessian(
    model: &SceneModel,
    s: &DVector<f64>,
    u: &DVector<f64>,
    mode: HessianMode,
) -> Result<DMatrix<f64>, SolveError> {
    let cache = KinCache::new(s);
    let want_sd = mode == HessianMode::Full;
    let ev = evaluate(&model.blocks, &cache, u, model.control_dim(), true, false, want_sd)?;
    Ok(hessian_from_parts(&ev.c, ev.jac_s.as_ref().unwrap(), ev.second.as_ref()))
}

/// `dG/du = J^T dC/du + sum_r C_r d2C_r/ds du`
pub fn mixed_derivative(
    model: &SceneModel,
    s: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>, SolveError> {
    let cache = KinCache::new(s);
    let ev = evaluate(&model.blocks, &cache, u, model.control_dim(), true, true, true)?;
    Ok(mixed_from_parts(
        &ev.c,
        ev.jac_s.as_ref().unwrap(),
        ev.jac_u.as_ref().unwrap(),
        ev.second.as_ref().unwrap(),
    ))
}

/// Damped Newton iteration on the constraint energy.
///
/// Deterministic for identical inputs. Returns `converged = false` when the
/// iteration budget runs out; the best state found so far is retained.
pub fn solve_fk(
    model: &SceneModel,
    s_init: &DVector<f64>,
    u: &DVector<f64>,
    cfg: &FkConfig,
) -> Result<SolveReport, SolveError> {
    let start = Instant::now();
    let n = model.state_dim();
    let want_sd = cfg.hessian_mode == HessianMode::Full;

    let mut s = s_init.clone();
    let mut lm = cfg.lm_init.max(LM_MIN);

    let eval_at = |s: &DVector<f64>| -> Result<_, SolveError> {
        let cache = KinCache::new(s);
        let ev = evaluate(&model.blocks, &cache, u, model.control_dim(), true, false, want_sd)?;
        Ok(ev)
    };

    let mut ev = eval_at(&s)?;
    let mut e = 0.5 * ev.c.norm_squared();
    let mut g = ev.jac_s.as_ref().unwrap().transpose() * &ev.c;
    let mut iters = 0usize;

    loop {
        let grad_norm = g.amax();
        if grad_norm <= cfg.grad_tol {
            return Ok(SolveReport {
                s_hat: s,
                energy: e,
                grad_norm,
                iters,
                wall_time: start.elapsed().as_secs_f64(),
                converged: true,
            });
        }
        if iters >= cfg.max_iters {
            return Ok(SolveReport {
                s_hat: s,
                energy: e,
                grad_norm,
                iters,
                wall_time: start.elapsed().as_secs_f64(),
                converged: false,
            });
        }

        let h = hessian_from_parts(&ev.c, ev.jac_s.as_ref().unwrap(), ev.second.as_ref());

        // inner damping loop: escalate until a step factors and decreases E
        loop {
            let mut hd = h.clone();
            for i in 0..n {
                hd[(i, i)] += lm;
            }
            let step = match hd.cholesky() {
                Some(chol) => chol.solve(&(-&g)),
                None => {
                    lm *= 10.0;
                    if lm > LM_MAX {
                        return Err(SolveError::SolverBreakdown { damping: lm });
                    }
                    continue;
                }
            };
            let s_try = &s + &step;
            let ev_try = eval_at(&s_try)?;
            let e_try = 0.5 * ev_try.c.norm_squared();
            if e_try <= e {
                s = s_try;
                ev = ev_try;
                e = e_try;
                g = ev.jac_s.as_ref().unwrap().transpose() * &ev.c;
                lm = (lm / 10.0).max(LM_MIN);
                break;
            }
            lm *= 10.0;
            if lm > LM_MAX {
                return Err(SolveError::SolverBreakdown { damping: lm });
            }
        }
        iters += 1;
    }
}

/// State sensitivity together with the constraint value and control Jacobian
/// from the same evaluation.
pub struct Sensitivity {
    /// `ds/du` at the converged state.
    pub ds_du: DMatrix<f64>,
    pub c: DVector<f64>,
    pub jac_u: DMatrix<f64>,
}

/// Implicit sensitivity of the converged state with respect to the controls:
/// solves `(dG/ds) X = -dG/du` at a converged forward solution.
pub fn state_sensitivity(
    model: &SceneModel,
    s_hat: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<DMatrix<f64>, SolveError> {
    Ok(state_sensitivity_full(model, s_hat, u)?.ds_du)
}

/// Like [`state_sensitivity`], but also returns the constraint value and
/// control Jacobian so callers that need all three pay for one evaluation.
pub fn state_sensitivity_full(
    model: &SceneModel,
    s_hat: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<Sensitivity, SolveError> {
    let cache = KinCache::new(s_hat);
    let ev = evaluate(&model.blocks, &cache, u, model.control_dim(), true, true, true)?;
    let h = hessian_from_parts(&ev.c, ev.jac_s.as_ref().unwrap(), ev.second.as_ref());
    let rhs = -mixed_from_parts(
        &ev.c,
        ev.jac_s.as_ref().unwrap(),
        ev.jac_u.as_ref().unwrap(),
        ev.second.as_ref().unwrap(),
    );

    let n = model.state_dim();
    let mut lm = 0.0f64;
    loop {
        let mut hd = h.clone();
        if lm > 0.0 {
            for i in 0..n {
                hd[(i, i)] += lm;
            }
        }
        if let Some(chol) = hd.cholesky() {
            return Ok(Sensitivity {
                ds_du: chol.solve(&rhs),
                c: ev.c,
                jac_u: ev.jac_u.unwrap(),
            });
        }
        lm = if lm == 0.0 { 1e-12 } else { lm * 10.0 };
        if lm > 1e-9 {
            return Err(SolveError::SingularSensitivity);
        }
    }
}
