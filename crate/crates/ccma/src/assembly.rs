//! Scene model, scene-file parsing/serialization, validation, and initial
//! state preparation.
//!
//! A scene file is a JSON document: bodies with initial poses, passive joints
//! referencing bodies by name, mobile bases with an actuation scheme, and one
//! end-effector with a 6-component task mask over `(x, y, z, gamma, beta, alpha)`.
//! Planar and motor constraint blocks are generated from the base list; only
//! passive joints appear in the `joints` array.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{BlockData, ConstraintBlock, ControlVector, total_rows};
use crate::forward_solver::{solve_fk, FkConfig, SolveError};
use crate::rigidbody::RigidBodyState;

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// Axis unit-norm acceptance threshold at load; axes further than a last-bit
/// rounding from unit length are renormalized after the check so downstream
/// code sees exact unit vectors.
const AXIS_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Reduced,
    Complete,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Body {
    pub name: String,
    pub initial: RigidBodyState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobileBase {
    pub body: usize,
    pub scheme: Scheme,
    /// Initial control values `(x, y, theta)` for this base.
    pub initial: [f64; 3],
}

/// A fully validated CCMA instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub name: String,
    pub bodies: Vec<Body>,
    pub blocks: Vec<ConstraintBlock>,
    pub mobile_bases: Vec<MobileBase>,
    pub end_effector: usize,
    pub task_mask: [bool; 6],
}

impl SceneModel {
    pub fn n_bodies(&self) -> usize {
        self.bodies.len()
    }

    pub fn n_bases(&self) -> usize {
        self.mobile_bases.len()
    }

    pub fn state_dim(&self) -> usize {
        6 * self.bodies.len()
    }

    pub fn control_dim(&self) -> usize {
        3 * self.mobile_bases.len()
    }

    pub fn n_rows(&self) -> usize {
        total_rows(&self.blocks)
    }

    /// Free IK variables: `3 * n_m` minus one frozen theta per reduced base.
    pub fn num_free_controls(&self) -> usize {
        self.control_dim()
            - self
                .mobile_bases
                .iter()
                .filter(|b| b.scheme == Scheme::Reduced)
                .count()
    }

    pub fn initial_state(&self) -> DVector<f64> {
        let mut s = DVector::zeros(self.state_dim());
        for (b, body) in self.bodies.iter().enumerate() {
            body.initial.write_slice(&mut s.as_mut_slice()[6 * b..6 * b + 6]);
        }
        s
    }

    pub fn initial_controls(&self) -> ControlVector {
        let mut values = DVector::zeros(self.control_dim());
        let mut frozen = vec![false; self.control_dim()];
        for (k, base) in self.mobile_bases.iter().enumerate() {
            values[3 * k] = base.initial[0];
            values[3 * k + 1] = base.initial[1];
            values[3 * k + 2] = base.initial[2];
            if base.scheme == Scheme::Reduced {
                frozen[3 * k + 2] = true;
            }
        }
        ControlVector::new(values, frozen)
    }

    pub fn body_index(&self, name: &str) -> Option<usize> {
        self.bodies.iter().position(|b| b.name == name)
    }
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("unsupported scene format version {got} (expected {SCENE_FORMAT_VERSION})")]
    UnsupportedVersion { got: u32 },
    #[error("duplicate body name '{name}'")]
    DuplicateBodyName { name: String },
    #[error("{context} references unknown body '{name}'")]
    DanglingBodyRef { context: String, name: String },
    #[error("body '{name}' is referenced by more than one mobile base")]
    DuplicateBase { name: String },
    #[error("{context}: axis norm {norm} deviates from 1 by more than {AXIS_NORM_TOL}")]
    NonUnitAxis { context: String, norm: f64 },
    #[error("scene has no mobile bases")]
    NoMobileBases,
    #[error("task mask selects no coordinates")]
    EmptyTaskMask,
    #[error("unknown canonical scene '{0}'")]
    UnknownCanonical(String),
    #[error("cannot read scene '{path}': {msg}")]
    ReadFailed { path: String, msg: String },
    #[error("scene does not assemble: worst block {worst_block} residual {worst_residual:.3e}")]
    InfeasibleScene {
        worst_block: usize,
        worst_residual: f64,
        per_block: Vec<(usize, f64)>,
    },
    #[error("forward solve failed during assembly: {0}")]
    Solve(#[from] SolveError),
}

// ---- external scene-file schema ------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct SceneFile {
    version: u32,
    name: String,
    bodies: Vec<BodySpec>,
    joints: Vec<JointSpec>,
    bases: Vec<BaseSpec>,
    end_effector: EndEffectorSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct BodySpec {
    name: String,
    euler: [f64; 3],
    t: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum JointSpec {
    Revolute {
        body_i: String,
        body_j: String,
        point_i: [f64; 3],
        point_j: [f64; 3],
        axis_i: [f64; 3],
        axis_j: [f64; 3],
    },
    Spherical {
        body_i: String,
        body_j: String,
        point_i: [f64; 3],
        point_j: [f64; 3],
    },
    Fixed {
        body_i: String,
        body_j: String,
        point_i: [f64; 3],
        point_j: [f64; 3],
        axis_a_i: [f64; 3],
        axis_a_j: [f64; 3],
        axis_b_i: [f64; 3],
        axis_b_j: [f64; 3],
    },
    Universal {
        body_i: String,
        body_j: String,
        point_i: [f64; 3],
        point_j: [f64; 3],
        axis_i: [f64; 3],
        axis_j: [f64; 3],
    },
    Prismatic {
        body_i: String,
        body_j: String,
        point_i: [f64; 3],
        point_j: [f64; 3],
        slide_i: [f64; 3],
        slide_j: [f64; 3],
        normal_i: [f64; 3],
        normal_j: [f64; 3],
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct BaseSpec {
    body: String,
    scheme: Scheme,
    initial: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct EndEffectorSpec {
    body: String,
    mask: [bool; 6],
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

fn arr3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn unit_axis(a: [f64; 3], context: &str) -> Result<Vector3<f64>, SceneError> {
    let v = vec3(a);
    let norm = v.norm();
    if (norm - 1.0).abs() > AXIS_NORM_TOL {
        return Err(SceneError::NonUnitAxis { context: context.to_string(), norm });
    }
    // renormalize only when measurably off unit: dividing an already-unit
    // vector by its ~1.0 norm perturbs the last bit and would break the
    // serialize/load textual round trip
    if (norm - 1.0).abs() > 1e-12 {
        return Ok(v / norm);
    }
    Ok(v)
}

/// Parses and validates a scene document.
pub fn load_scene(text: &str) -> Result<SceneModel, SceneError> {
    let file: SceneFile = serde_json::from_str(text).map_err(|e| SceneError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    scene_from_file(file)
}

fn scene_from_file(file: SceneFile) -> Result<SceneModel, SceneError> {
    if file.version != SCENE_FORMAT_VERSION {
        return Err(SceneError::UnsupportedVersion { got: file.version });
    }

    let mut bodies = Vec::with_capacity(file.bodies.len());
    for spec in &file.bodies {
        if bodies.iter().any(|b: &Body| b.name == spec.name) {
            return Err(SceneError::DuplicateBodyName { name: spec.name.clone() });
        }
        bodies.push(Body {
            name: spec.name.clone(),
            initial: RigidBodyState {
                gamma: spec.euler[0],
                beta: spec.euler[1],
                alpha: spec.euler[2],
                t: vec3(spec.t),
            },
        });
    }

    let lookup = |name: &str, context: String| -> Result<usize, SceneError> {
        bodies
            .iter()
            .position(|b| b.name == name)
            .ok_or(SceneError::DanglingBodyRef { context, name: name.to_string() })
    };

    let mut blocks = Vec::new();
    let mut row = 0usize;
    for (idx, joint) in file.joints.iter().enumerate() {
        let ctx = |field: &str| format!("joint {idx} {field}");
        let data = match joint {
            JointSpec::Revolute { body_i, body_j, point_i, point_j, axis_i, axis_j } => {
                BlockData::Revolute {
                    body_i: lookup(body_i, ctx("body_i"))?,
                    body_j: lookup(body_j, ctx("body_j"))?,
                    p_i: vec3(*point_i),
                    p_j: vec3(*point_j),
                    axis_i: unit_axis(*axis_i, &ctx("axis_i"))?,
                    axis_j: unit_axis(*axis_j, &ctx("axis_j"))?,
                }
            }
            JointSpec::Spherical { body_i, body_j, point_i, point_j } => BlockData::Spherical {
                body_i: lookup(body_i, ctx("body_i"))?,
                body_j: lookup(body_j, ctx("body_j"))?,
                p_i: vec3(*point_i),
                p_j: vec3(*point_j),
            },
            JointSpec::Fixed {
                body_i,
                body_j,
                point_i,
                point_j,
                axis_a_i,
                axis_a_j,
                axis_b_i,
                axis_b_j,
            } => BlockData::Fixed {
                body_i: lookup(body_i, ctx("body_i"))?,
                body_j: lookup(body_j, ctx("body_j"))?,
                p_i: vec3(*point_i),
                p_j: vec3(*point_j),
                a_i: unit_axis(*axis_a_i, &ctx("axis_a_i"))?,
                a_j: unit_axis(*axis_a_j, &ctx("axis_a_j"))?,
                b_i: unit_axis(*axis_b_i, &ctx("axis_b_i"))?,
                b_j: unit_axis(*axis_b_j, &ctx("axis_b_j"))?,
            },
            JointSpec::Universal { body_i, body_j, point_i, point_j, axis_i, axis_j } => {
                BlockData::Universal {
                    body_i: lookup(body_i, ctx("body_i"))?,
                    body_j: lookup(body_j, ctx("body_j"))?,
                    p_i: vec3(*point_i),
                    p_j: vec3(*point_j),
                    axis_i: unit_axis(*axis_i, &ctx("axis_i"))?,
                    axis_j: unit_axis(*axis_j, &ctx("axis_j"))?,
                }
            }
            JointSpec::Prismatic {
                body_i,
                body_j,
                point_i,
                point_j,
                slide_i,
                slide_j,
                normal_i,
                normal_j,
            } => BlockData::Prismatic {
                body_i: lookup(body_i, ctx("body_i"))?,
                body_j: lookup(body_j, ctx("body_j"))?,
                p_i: vec3(*point_i),
                p_j: vec3(*point_j),
                slide_i: unit_axis(*slide_i, &ctx("slide_i"))?,
                slide_j: unit_axis(*slide_j, &ctx("slide_j"))?,
                normal_i: unit_axis(*normal_i, &ctx("normal_i"))?,
                normal_j: unit_axis(*normal_j, &ctx("normal_j"))?,
            },
        };
        let block = ConstraintBlock { data, row_offset: row };
        row += block.rows();
        blocks.push(block);
    }

    if file.bases.is_empty() {
        return Err(SceneError::NoMobileBases);
    }
    let mut mobile_bases = Vec::with_capacity(file.bases.len());
    for (k, spec) in file.bases.iter().enumerate() {
        let body = lookup(&spec.body, format!("base {k}"))?;
        if mobile_bases.iter().any(|b: &MobileBase| b.body == body) {
            return Err(SceneError::DuplicateBase { name: spec.body.clone() });
        }
        mobile_bases.push(MobileBase { body, scheme: spec.scheme, initial: spec.initial });

        for data in [
            BlockData::PlanarBase { body },
            BlockData::MotorXy { body, slot_x: 3 * k, slot_y: 3 * k + 1 },
            BlockData::MotorZ { body, slot_theta: 3 * k + 2 },
        ] {
            let block = ConstraintBlock { data, row_offset: row };
            row += block.rows();
            blocks.push(block);
        }
    }

    let end_effector = lookup(&file.end_effector.body, "end_effector".to_string())?;
    if !file.end_effector.mask.iter().any(|&m| m) {
        return Err(SceneError::EmptyTaskMask);
    }

    Ok(SceneModel {
        name: file.name,
        bodies,
        blocks,
        mobile_bases,
        end_effector,
        task_mask: file.end_effector.mask,
    })
}

/// Serializes a model back to scene-file text. `load_scene(serialize_scene(m))`
/// reproduces `m` exactly (JSON doubles round-trip bitwise).
pub fn serialize_scene(model: &SceneModel) -> String {
    let name_of = |idx: usize| model.bodies[idx].name.clone();
    let joints = model
        .blocks
        .iter()
        .filter_map(|block| match &block.data {
            BlockData::Revolute { body_i, body_j, p_i, p_j, axis_i, axis_j } => {
                Some(JointSpec::Revolute {
                    body_i: name_of(*body_i),
                    body_j: name_of(*body_j),
                    point_i: arr3(p_i),
                    point_j: arr3(p_j),
                    axis_i: arr3(axis_i),
                    axis_j: arr3(axis_j),
                })
            }
            BlockData::Spherical { body_i, body_j, p_i, p_j } => Some(JointSpec::Spherical {
                body_i: name_of(*body_i),
                body_j: name_of(*body_j),
                point_i: arr3(p_i),
                point_j: arr3(p_j),
            }),
            BlockData::Fixed { body_i, body_j, p_i, p_j, a_i, a_j, b_i, b_j } => {
                Some(JointSpec::Fixed {
                    body_i: name_of(*body_i),
                    body_j: name_of(*body_j),
                    point_i: arr3(p_i),
                    point_j: arr3(p_j),
                    axis_a_i: arr3(a_i),
                    axis_a_j: arr3(a_j),
                    axis_b_i: arr3(b_i),
                    axis_b_j: arr3(b_j),
                })
            }
            BlockData::Universal { body_i, body_j, p_i, p_j, axis_i, axis_j } => {
                Some(JointSpec::Universal {
                    body_i: name_of(*body_i),
                    body_j: name_of(*body_j),
                    point_i: arr3(p_i),
                    point_j: arr3(p_j),
                    axis_i: arr3(axis_i),
                    axis_j: arr3(axis_j),
                })
            }
            BlockData::Prismatic {
                body_i,
                body_j,
                p_i,
                p_j,
                slide_i,
                slide_j,
                normal_i,
                normal_j,
            } => Some(JointSpec::Prismatic {
                body_i: name_of(*body_i),
                body_j: name_of(*body_j),
                point_i: arr3(p_i),
                point_j: arr3(p_j),
                slide_i: arr3(slide_i),
                slide_j: arr3(slide_j),
                normal_i: arr3(normal_i),
                normal_j: arr3(normal_j),
            }),
            BlockData::PlanarBase { .. } | BlockData::MotorXy { .. } | BlockData::MotorZ { .. } => {
                None
            }
        })
        .collect();

    let file = SceneFile {
        version: SCENE_FORMAT_VERSION,
        name: model.name.clone(),
        bodies: model
            .bodies
            .iter()
            .map(|b| BodySpec {
                name: b.name.clone(),
                euler: [b.initial.gamma, b.initial.beta, b.initial.alpha],
                t: arr3(&b.initial.t),
            })
            .collect(),
        joints,
        bases: model
            .mobile_bases
            .iter()
            .map(|b| BaseSpec {
                body: model.bodies[b.body].name.clone(),
                scheme: b.scheme,
                initial: b.initial,
            })
            .collect(),
        end_effector: EndEffectorSpec {
            body: model.bodies[model.end_effector].name.clone(),
            mask: model.task_mask,
        },
    };
    serde_json::to_string_pretty(&file).expect("scene serialization cannot fail")
}

/// Threshold on the polished initial energy below which a scene is considered
/// consistently specified.
pub const ASSEMBLY_ENERGY_TOL: f64 = 1e-18;

/// Prepares `(s0, u0)`: controls from the base list, state polished by one
/// forward solve so the reference configuration is feasible to solver
/// precision.
pub fn initial_assembly(
    model: &SceneModel,
) -> Result<(DVector<f64>, ControlVector), SceneError> {
    let u = model.initial_controls();
    let s_init = model.initial_state();
    let report = solve_fk(model, &s_init, &u.values, &FkConfig::default())?;
    if !report.converged || report.energy >= ASSEMBLY_ENERGY_TOL {
        let cache = crate::constraints::KinCache::new(&report.s_hat);
        let c = crate::constraints::assemble_c(&model.blocks, &cache, &u.values, u.len())
            .map_err(SolveError::from)?;
        let mut per_block: Vec<(usize, f64)> = model
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let r = c.rows(b.row_offset, b.rows());
                (i, r.amax())
            })
            .collect();
        per_block.sort_by(|a, b| b.1.total_cmp(&a.1));
        let (worst_block, worst_residual) = per_block[0];
        return Err(SceneError::InfeasibleScene { worst_block, worst_residual, per_block });
    }
    Ok((report.s_hat, u))
}
