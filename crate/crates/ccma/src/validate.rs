//! Finite-difference validation of every derivative layer, from constraint
//! Jacobians up to the implicit objective gradient.
//!
//! Local layers (closed-form derivatives of `C` and `E`) are checked by
//! central differences at a deliberately perturbed state so that `C != 0` and
//! the curvature terms carry weight. Pipeline layers (quantities defined
//! through the converged forward solution) re-solve the forward problem at a
//! tightened tolerance for every probe, which is why they use a larger
//! acceptance threshold.

use nalgebra::{DMatrix, DVector};

use crate::assembly::SceneModel;
use crate::constraints::{assemble_c, evaluate, ControlVector, KinCache};
use crate::forward_solver::{
    energy, energy_gradient, energy_hessian, mixed_derivative, solve_fk, state_sensitivity,
    FkConfig, HessianMode, SolveError,
};
use crate::ik_control::{ee_state, objective, objective_gradient, EeTarget};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    JacS,
    JacU,
    EnergyGrad,
    EnergyHessian,
    MixedGu,
    StateSensitivity,
    ObjectiveGrad,
}

pub const ALL_LAYERS: [Layer; 7] = [
    Layer::JacS,
    Layer::JacU,
    Layer::EnergyGrad,
    Layer::EnergyHessian,
    Layer::MixedGu,
    Layer::StateSensitivity,
    Layer::ObjectiveGrad,
];

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::JacS => "jac_s",
            Layer::JacU => "jac_u",
            Layer::EnergyGrad => "energy_grad",
            Layer::EnergyHessian => "energy_hessian",
            Layer::MixedGu => "mixed_gu",
            Layer::StateSensitivity => "state_sensitivity",
            Layer::ObjectiveGrad => "objective_grad",
        }
    }

    pub fn from_name(name: &str) -> Option<Layer> {
        ALL_LAYERS.iter().copied().find(|l| l.name() == name)
    }

    fn is_pipeline(&self) -> bool {
        matches!(self, Layer::StateSensitivity | Layer::ObjectiveGrad)
    }

    pub fn tolerance(&self) -> f64 {
        if self.is_pipeline() {
            PIPELINE_TOL
        } else {
            LOCAL_TOL
        }
    }
}

pub const LOCAL_H: f64 = 1e-5;
const LOCAL_TOL: f64 = 1e-6;
pub const PIPELINE_H: f64 = 1e-6;
const PIPELINE_TOL: f64 = 1e-4;

/// Step sizes and perturbation phase for one validation run.
#[derive(Debug, Clone)]
pub struct ValidateOptions {
    pub h_local: f64,
    pub h_pipeline: f64,
    /// Varies the deterministic state perturbation so repeated trials probe
    /// different configurations.
    pub trial: u64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self { h_local: LOCAL_H, h_pipeline: PIPELINE_H, trial: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct LayerResult {
    pub layer: Layer,
    pub max_rel_err: f64,
    /// `(row, column)` of the worst entry in the compared quantity.
    pub worst_index: (usize, usize),
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub results: Vec<LayerResult>,
    pub all_pass: bool,
}

fn rel_err(a: f64, f: f64) -> f64 {
    (a - f).abs() / 1.0f64.max(a.abs()).max(f.abs())
}

fn max_rel_err_mat(a: &DMatrix<f64>, f: &DMatrix<f64>) -> (f64, (usize, usize)) {
    let mut worst = (0.0, (0, 0));
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let e = rel_err(a[(i, j)], f[(i, j)]);
            if e > worst.0 {
                worst = (e, (i, j));
            }
        }
    }
    worst
}

fn max_rel_err_vec(a: &DVector<f64>, f: &DVector<f64>) -> (f64, (usize, usize)) {
    let mut worst = (0.0, (0, 0));
    for i in 0..a.len() {
        let e = rel_err(a[i], f[i]);
        if e > worst.0 {
            worst = (e, (i, 0));
        }
    }
    worst
}

fn assemble(model: &SceneModel, s: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, SolveError> {
    let cache = KinCache::new(s);
    Ok(assemble_c(&model.blocks, &cache, u, model.control_dim())?)
}

/// Central difference of a vector-valued function along coordinate `j`.
fn central<F>(mut f: F, x: &DVector<f64>, j: usize, h: f64) -> Result<DVector<f64>, SolveError>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>, SolveError>,
{
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp[j] += h;
    xm[j] -= h;
    Ok((f(&xp)? - f(&xm)?) / (2.0 * h))
}

fn fd_jacobian<F>(
    f: F,
    x: &DVector<f64>,
    rows: usize,
    h: f64,
) -> Result<DMatrix<f64>, SolveError>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>, SolveError>,
{
    let mut jac = DMatrix::zeros(rows, x.len());
    for j in 0..x.len() {
        let col = central(&f, x, j, h)?;
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Validates the requested derivative layers around the configuration
/// `(s, u)`. When `corrupt` names a layer, its analytic value is perturbed by
/// `1e-3` in one entry before comparison; the layer must then fail, which is
/// how the validator itself is tested.
pub fn validate_derivatives(
    model: &SceneModel,
    s: &DVector<f64>,
    u: &ControlVector,
    layers: &[Layer],
    corrupt: Option<Layer>,
    opts: &ValidateOptions,
) -> Result<ValidationReport, SolveError> {
    // deterministic off-manifold perturbation for the local layers
    let mut s_local = s.clone();
    let phase = 17.0 * opts.trial as f64;
    for i in 0..s_local.len() {
        s_local[i] += 0.003 * (phase + (1 + i) as f64).sin();
    }
    let u_vals = &u.values;
    let n_u = model.control_dim();
    let n_rows = model.n_rows();
    let (local_h, pipeline_h) = (opts.h_local, opts.h_pipeline);

    let tight = FkConfig { grad_tol: 1e-12, ..FkConfig::default() };

    let mut results = Vec::with_capacity(layers.len());
    for &layer in layers {
        let poison = |m: &mut DMatrix<f64>| {
            if corrupt == Some(layer) {
                m[(0, 0)] += 1e-3;
            }
        };
        let (max_err, worst_index) = match layer {
            Layer::JacS => {
                let cache = KinCache::new(&s_local);
                let ev = evaluate(&model.blocks, &cache, u_vals, n_u, true, false, false)?;
                let mut a = ev.jac_s.unwrap();
                poison(&mut a);
                let fd = fd_jacobian(
                    |x| assemble(model, x, u_vals),
                    &s_local,
                    n_rows,
                    local_h,
                )?;
                max_rel_err_mat(&a, &fd)
            }
            Layer::JacU => {
                let cache = KinCache::new(&s_local);
                let ev = evaluate(&model.blocks, &cache, u_vals, n_u, false, true, false)?;
                let mut a = ev.jac_u.unwrap();
                poison(&mut a);
                let fd = fd_jacobian(
                    |x| assemble(model, &s_local, x),
                    u_vals,
                    n_rows,
                    local_h,
                )?;
                max_rel_err_mat(&a, &fd)
            }
            Layer::EnergyGrad => {
                let mut a = energy_gradient(model, &s_local, u_vals)?;
                if corrupt == Some(layer) {
                    a[0] += 1e-3;
                }
                let fd = fd_jacobian(
                    |x| Ok(DVector::from_element(1, energy(model, x, u_vals)?)),
                    &s_local,
                    1,
                    local_h,
                )?;
                max_rel_err_vec(&a, &fd.transpose().column(0).into_owned())
            }
            Layer::EnergyHessian => {
                let mut a = energy_hessian(model, &s_local, u_vals, HessianMode::Full)?;
                poison(&mut a);
                let fd = fd_jacobian(
                    |x| energy_gradient(model, x, u_vals),
                    &s_local,
                    model.state_dim(),
                    local_h,
                )?;
                max_rel_err_mat(&a, &fd)
            }
            Layer::MixedGu => {
                let mut a = mixed_derivative(model, &s_local, u_vals)?;
                poison(&mut a);
                let fd = fd_jacobian(
                    |x| energy_gradient(model, &s_local, x),
                    u_vals,
                    model.state_dim(),
                    local_h,
                )?;
                max_rel_err_mat(&a, &fd)
            }
            Layer::StateSensitivity => {
                let base = solve_fk(model, s, u_vals, &tight)?;
                let mut a = state_sensitivity(model, &base.s_hat, u_vals)?;
                poison(&mut a);
                let fd = fd_jacobian(
                    |x| Ok(solve_fk(model, &base.s_hat, x, &tight)?.s_hat),
                    u_vals,
                    model.state_dim(),
                    pipeline_h,
                )?;
                max_rel_err_mat(&a, &fd)
            }
            Layer::ObjectiveGrad => {
                let base = solve_fk(model, s, u_vals, &tight)?;
                let target = offset_target(model, &ee_state(model, &base.s_hat));
                let mut a =
                    objective_gradient(model, &base.s_hat, u_vals, &target, 0.1, 0.05)?;
                if corrupt == Some(layer) {
                    a[0] += 1e-3;
                }
                let fd = fd_jacobian(
                    |x| {
                        let rep = solve_fk(model, &base.s_hat, x, &tight)?;
                        Ok(DVector::from_element(
                            1,
                            objective(model, &rep.s_hat, x, &target, 0.1, 0.05)?,
                        ))
                    },
                    u_vals,
                    1,
                    pipeline_h,
                )?;
                max_rel_err_vec(&a, &fd.transpose().column(0).into_owned())
            }
        };
        let tolerance = layer.tolerance();
        results.push(LayerResult {
            layer,
            max_rel_err: max_err,
            worst_index,
            tolerance,
            pass: max_err <= tolerance,
        });
    }
    let all_pass = results.iter().all(|r| r.pass);
    Ok(ValidationReport { results, all_pass })
}

/// A nearby non-trivial target for objective-gradient probing; unmasked
/// coordinates are offset too so the posture term carries weight.
fn offset_target(_model: &SceneModel, x: &EeTarget) -> EeTarget {
    let offsets = [0.02, -0.015, 0.01, 0.01, -0.008, 0.006];
    let mut t = *x;
    for c in 0..6 {
        t[c] += offsets[c];
    }
    t
}
