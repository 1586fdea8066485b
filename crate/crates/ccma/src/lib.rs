//! Constraint-based kinematics engine for constrained collaborative mobile
//! agents (CCMA): rigid bodies joined by a passive linkage, actuated only
//! through planar mobile bases, positioning a shared end-effector.
//!
//! The crate is layered bottom-up:
//! - [`rigidbody`]: Euler-angle body states and analytic rotation derivatives;
//! - [`constraints`]: constraint blocks `C(s, u)` with first and second
//!   derivatives;
//! - [`assembly`]: scene files, validation, and initial assembly;
//! - [`forward_solver`]: damped-Newton energy minimization and implicit state
//!   sensitivities;
//! - [`ik_control`]: BFGS kinematic control and waypoint tracking;
//! - [`base_sim`]: omnidirectional wheel kinematics and open-loop execution
//!   simulation;
//! - [`validate`]: finite-difference checks of every derivative layer;
//! - [`canonical`] and [`io`]: built-in scenes and artifact I/O for the CLI.

pub mod assembly;
pub mod base_sim;
pub mod canonical;
pub mod constraints;
pub mod forward_solver;
pub mod ik_control;
pub mod io;
pub mod rigidbody;
pub mod validate;

use assembly::{SceneError, SceneModel};

/// Resolves a scene argument: a canonical scene name, or a path to a scene
/// file.
pub fn resolve_scene(spec: &str) -> Result<SceneModel, SceneError> {
    if canonical::CANONICAL_NAMES.contains(&spec) {
        return canonical::build_canonical(spec);
    }
    let text = std::fs::read_to_string(spec).map_err(|e| SceneError::ReadFailed {
        path: spec.to_string(),
        msg: e.to_string(),
    })?;
    assembly::load_scene(&text)
}
