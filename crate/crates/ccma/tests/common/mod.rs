//! Shared helpers for the integration tests.
#![allow(dead_code)]

use ccma::assembly::{initial_assembly, SceneModel};
use ccma::canonical::build_canonical;
use ccma::constraints::{assemble_c, ControlVector, KinCache};
use ccma::ik_control::{ee_state, EeTarget};
use nalgebra::DVector;

pub const TRANS_AMP: f64 = 0.1;
pub const ROT_AMP: f64 = 0.4;

/// Builds a canonical scene together with its assembled state and controls.
pub fn scene(name: &str) -> (SceneModel, DVector<f64>, ControlVector) {
    let model = build_canonical(name).expect("canonical scene must build");
    let (s0, u0) = initial_assembly(&model).expect("canonical scene must assemble");
    (model, s0, u0)
}

/// Sequential per-DOF excursion profile in the paper's order (y, z, x, then
/// rotations), returning to home after each axis.
pub fn sequential_profile(home: EeTarget, mask: [bool; 6]) -> Vec<EeTarget> {
    let mut wps = Vec::new();
    for c in [1usize, 2, 0, 3, 4, 5] {
        if !mask[c] {
            continue;
        }
        let amp = if c < 3 { TRANS_AMP } else { ROT_AMP };
        let mut w = home;
        w[c] = home[c] + amp;
        wps.push(w);
        w[c] = home[c] - amp;
        wps.push(w);
        wps.push(home);
    }
    wps
}

/// Simultaneous profile: every masked coordinate excursions at once, to the
/// positive corner and back, then the negative corner and back.
pub fn simultaneous_profile(home: EeTarget, mask: [bool; 6]) -> Vec<EeTarget> {
    let mut wps = Vec::new();
    for sgn in [1.0, -1.0] {
        let mut w = home;
        for c in 0..6 {
            if mask[c] {
                w[c] += sgn * if c < 3 { TRANS_AMP } else { ROT_AMP };
            }
        }
        wps.push(w);
        wps.push(home);
    }
    wps
}

/// Largest masked task error over a track report's rows.
pub fn max_masked_error(model: &SceneModel, rows: &[ccma::ik_control::TrackRow]) -> f64 {
    let mut worst = 0.0f64;
    for r in rows {
        for c in 0..6 {
            if model.task_mask[c] {
                worst = worst.max((r.achieved[c] - r.commanded[c]).abs());
            }
        }
    }
    worst
}

/// Infinity norm of the residual of the worst constraint block.
pub fn max_block_residual(model: &SceneModel, s: &DVector<f64>, u: &DVector<f64>) -> f64 {
    let cache = KinCache::new(s);
    let c = assemble_c(&model.blocks, &cache, u, model.control_dim()).unwrap();
    let mut worst = 0.0f64;
    for block in &model.blocks {
        let r = c.rows(block.row_offset, block.rows());
        worst = worst.max(r.amax());
    }
    worst
}

pub fn home_pose(model: &SceneModel, s0: &DVector<f64>) -> EeTarget {
    ee_state(model, s0)
}

/// In-range random control perturbation: each base moves within a 30 mm disc
/// in (x, y); a free heading slot moves within ±0.03 rad.
pub fn perturb_controls<R: rand::Rng>(
    rng: &mut R,
    u0: &ControlVector,
    model: &SceneModel,
) -> DVector<f64> {
    let mut u = u0.values.clone();
    for b in 0..model.control_dim() / 3 {
        loop {
            let dx = rng.gen_range(-0.03..0.03);
            let dy = rng.gen_range(-0.03..0.03);
            if dx * dx + dy * dy <= 0.03 * 0.03 {
                u[3 * b] += dx;
                u[3 * b + 1] += dy;
                break;
            }
        }
        if !u0.frozen[3 * b + 2] {
            u[3 * b + 2] += rng.gen_range(-0.03..0.03);
        }
    }
    u
}
