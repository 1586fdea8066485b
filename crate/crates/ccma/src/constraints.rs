//! Constraint blocks, their analytic derivatives, and global assembly of C(s, u).
//!
//! Every kinematic relation in a scene is a block of scalar constraint rows.
//! Joint blocks couple two bodies; base blocks couple one body to the world
//! frame and, for the motor kinds, to slots of the control vector u.
//!
//! Sign convention follows `quantity_j - quantity_i` throughout.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::rigidbody::{rot_z_matrix, rotation_derivatives, LocalPoint, LocalVector, RigidBodyState, RotationDerivs};

/// Control vector u, length `3 * n_m`, laid out `(x, y, theta)` per base.
///
/// Slots flagged frozen (the theta of a reduced-scheme base) keep their value
/// during inverse kinematics; forward kinematics always uses all slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector {
    pub values: DVector<f64>,
    pub frozen: Vec<bool>,
}

impl ControlVector {
    pub fn new(values: DVector<f64>, frozen: Vec<bool>) -> Self {
        assert_eq!(values.len(), frozen.len());
        Self { values, frozen }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.frozen[i]).collect()
    }

    pub fn num_free(&self) -> usize {
        self.frozen.iter().filter(|f| !**f).count()
    }
}

/// Payload of one constraint block. Points and axes are in the owning body's
/// local frame; axes are unit vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockData {
    /// Anchor coincidence plus axis alignment: 6 rows, rank 5.
    Revolute {
        body_i: usize,
        body_j: usize,
        p_i: LocalPoint,
        p_j: LocalPoint,
        axis_i: LocalVector,
        axis_j: LocalVector,
    },
    /// Anchor coincidence: 3 rows, rank 3.
    Spherical {
        body_i: usize,
        body_j: usize,
        p_i: LocalPoint,
        p_j: LocalPoint,
    },
    /// Welded connection: anchor coincidence plus two orthogonal axis pairs.
    /// 9 rows, rank 6.
    Fixed {
        body_i: usize,
        body_j: usize,
        p_i: LocalPoint,
        p_j: LocalPoint,
        a_i: LocalVector,
        a_j: LocalVector,
        b_i: LocalVector,
        b_j: LocalVector,
    },
    /// Anchor coincidence plus one axis-orthogonality row: 4 rows, rank 4.
    Universal {
        body_i: usize,
        body_j: usize,
        p_i: LocalPoint,
        p_j: LocalPoint,
        axis_i: LocalVector,
        axis_j: LocalVector,
    },
    /// Two-axis alignment plus two point-on-line rows: 8 rows, rank 5.
    /// `normal_i` is orthogonal to `slide_i`; the second line normal is
    /// `slide_i x normal_i`.
    Prismatic {
        body_i: usize,
        body_j: usize,
        p_i: LocalPoint,
        p_j: LocalPoint,
        slide_i: LocalVector,
        slide_j: LocalVector,
        normal_i: LocalVector,
        normal_j: LocalVector,
    },
    /// Base stays in the ground plane with its normal along world z:
    /// `[z, (R*(0,0,1) - z_g)^T]`, 4 rows, rank 3.
    PlanarBase { body: usize },
    /// Prismatic motors along world x and y: `[x - u[sx], y - u[sy]]`, 2 rows.
    MotorXy { body: usize, slot_x: usize, slot_y: usize },
    /// Rotary motor about world z: `R * (Rz(theta) * (1,0,0)) - x_g` with
    /// `theta = u[slot]`, 3 rows, rank 2 at assembled configurations.
    MotorZ { body: usize, slot_theta: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Revolute,
    Spherical,
    Fixed,
    Universal,
    Prismatic,
    PlanarBase,
    MotorXy,
    MotorZ,
}

/// One constraint block placed at `row_offset` in the global vector C.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBlock {
    pub data: BlockData,
    pub row_offset: usize,
}

impl ConstraintBlock {
    pub fn kind(&self) -> BlockKind {
        match self.data {
            BlockData::Revolute { .. } => BlockKind::Revolute,
            BlockData::Spherical { .. } => BlockKind::Spherical,
            BlockData::Fixed { .. } => BlockKind::Fixed,
            BlockData::Universal { .. } => BlockKind::Universal,
            BlockData::Prismatic { .. } => BlockKind::Prismatic,
            BlockData::PlanarBase { .. } => BlockKind::PlanarBase,
            BlockData::MotorXy { .. } => BlockKind::MotorXy,
            BlockData::MotorZ { .. } => BlockKind::MotorZ,
        }
    }

    pub fn rows(&self) -> usize {
        match self.kind() {
            BlockKind::Revolute => 6,
            BlockKind::Spherical => 3,
            BlockKind::Fixed => 9,
            BlockKind::Universal => 4,
            BlockKind::Prismatic => 8,
            BlockKind::PlanarBase => 4,
            BlockKind::MotorXy => 2,
            BlockKind::MotorZ => 3,
        }
    }

    /// Body indices referenced by this block.
    pub fn bodies(&self) -> (usize, Option<usize>) {
        match self.data {
            BlockData::Revolute { body_i, body_j, .. }
            | BlockData::Spherical { body_i, body_j, .. }
            | BlockData::Fixed { body_i, body_j, .. }
            | BlockData::Universal { body_i, body_j, .. }
            | BlockData::Prismatic { body_i, body_j, .. } => (body_i, Some(body_j)),
            BlockData::PlanarBase { body }
            | BlockData::MotorXy { body, .. }
            | BlockData::MotorZ { body, .. } => (body, None),
        }
    }

    /// Control slots referenced by this block (motor kinds only).
    pub fn control_slots(&self) -> Vec<usize> {
        match self.data {
            BlockData::MotorXy { slot_x, slot_y, .. } => vec![slot_x, slot_y],
            BlockData::MotorZ { slot_theta, .. } => vec![slot_theta],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("block {block}: state dimension {got}, expected {expected}")]
    StateDimension { block: usize, got: usize, expected: usize },
    #[error("block {block}: control dimension {got} too small, block needs slot {slot}")]
    ControlDimension { block: usize, got: usize, slot: usize },
    #[error("block {block}: body index {body} out of range ({n_b} bodies)")]
    BodyIndex { block: usize, body: usize, n_b: usize },
}

/// Per-body rotation derivative cache for one system state.
pub struct KinCache {
    pub rots: Vec<RotationDerivs>,
    pub ts: Vec<Vector3<f64>>,
}

impl KinCache {
    pub fn new(s: &DVector<f64>) -> Self {
        let n_b = s.len() / 6;
        let mut rots = Vec::with_capacity(n_b);
        let mut ts = Vec::with_capacity(n_b);
        for b in 0..n_b {
            let st = RigidBodyState::from_slice(&s.as_slice()[6 * b..6 * b + 6]);
            rots.push(rotation_derivatives(&st));
            ts.push(st.t);
        }
        Self { rots, ts }
    }

    pub fn n_bodies(&self) -> usize {
        self.rots.len()
    }
}

/// Sparse second derivatives of C, one entry list per global constraint row.
///
/// An `ss` entry `(i, j, v)` with `i <= j` carries the full symmetric value
/// `d2C_r / ds_i ds_j = v`; an `su` entry `(i, j, v)` carries
/// `d2C_r / ds_i du_j = v`. Entries for the same index pair may repeat and sum.
#[derive(Debug, Clone)]
pub struct SecondDerivs {
    pub ss: Vec<Vec<(usize, usize, f64)>>,
    pub su: Vec<Vec<(usize, usize, f64)>>,
}

impl SecondDerivs {
    fn with_rows(m: usize) -> Self {
        Self {
            ss: vec![Vec::new(); m],
            su: vec![Vec::new(); m],
        }
    }

    /// Dense `d2C_r/ds ds` for one row; used by the derivative validators.
    pub fn dense_ss_row(&self, row: usize, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for &(i, j, v) in &self.ss[row] {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    pub fn dense_su_row(&self, row: usize, n: usize, nu: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, nu);
        for &(i, j, v) in &self.su[row] {
            m[(i, j)] += v;
        }
        m
    }
}

/// What to compute in one pass over the blocks.
#[derive(Debug)]
pub struct Evaluation {
    pub c: DVector<f64>,
    pub jac_s: Option<DMatrix<f64>>,
    pub jac_u: Option<DMatrix<f64>>,
    pub second: Option<SecondDerivs>,
}

pub fn total_rows(blocks: &[ConstraintBlock]) -> usize {
    blocks.iter().map(|b| b.rows()).sum()
}

struct Sink<'a> {
    c: &'a mut DVector<f64>,
    j: Option<&'a mut DMatrix<f64>>,
    ju: Option<&'a mut DMatrix<f64>>,
    sd: Option<&'a mut SecondDerivs>,
}

impl Sink<'_> {
    #[inline]
    fn jac(&mut self, row: usize, col: usize, v: f64) {
        if let Some(j) = self.j.as_deref_mut() {
            j[(row, col)] += v;
        }
    }

    #[inline]
    fn jac_u(&mut self, row: usize, col: usize, v: f64) {
        if let Some(j) = self.ju.as_deref_mut() {
            j[(row, col)] += v;
        }
    }

    #[inline]
    fn ss(&mut self, row: usize, i: usize, j: usize, v: f64) {
        if let Some(sd) = self.sd.as_deref_mut() {
            if v != 0.0 {
                let (a, b) = if i <= j { (i, j) } else { (j, i) };
                sd.ss[row].push((a, b, v));
            }
        }
    }

    #[inline]
    fn su(&mut self, row: usize, i: usize, j: usize, v: f64) {
        if let Some(sd) = self.sd.as_deref_mut() {
            if v != 0.0 {
                sd.su[row].push((i, j, v));
            }
        }
    }
}

/// Adds `sign * (R_b * local [+ t_b])` to rows `row..row+3` with derivatives.
fn add_frame_term(
    sink: &mut Sink,
    cache: &KinCache,
    row: usize,
    body: usize,
    local: &Vector3<f64>,
    sign: f64,
    with_translation: bool,
) {
    let rd = &cache.rots[body];
    let base = 6 * body;
    let mut w = rd.r * local;
    if with_translation {
        w += cache.ts[body];
    }
    for c in 0..3 {
        sink.c[row + c] += sign * w[c];
    }
    let want_j = sink.j.is_some();
    let want_sd = sink.sd.is_some();
    if want_j {
        for k in 0..3 {
            let dk = rd.d[k] * local;
            for c in 0..3 {
                sink.jac(row + c, base + k, sign * dk[c]);
            }
        }
        if with_translation {
            for c in 0..3 {
                sink.jac(row + c, base + 3 + c, sign);
            }
        }
    }
    if want_sd {
        for k in 0..3 {
            for l in k..3 {
                let dd = rd.dd[k][l] * local;
                for c in 0..3 {
                    sink.ss(row + c, base + k, base + l, sign * dd[c]);
                }
            }
        }
    }
}

/// Adds the axis-orthogonality row `c = (R_i a) . (R_j b)` at `row`.
fn add_dot_row(
    sink: &mut Sink,
    cache: &KinCache,
    row: usize,
    body_i: usize,
    a_local: &Vector3<f64>,
    body_j: usize,
    b_local: &Vector3<f64>,
) {
    debug_assert_ne!(body_i, body_j);
    let ri = &cache.rots[body_i];
    let rj = &cache.rots[body_j];
    let bi = 6 * body_i;
    let bj = 6 * body_j;
    let a = ri.r * a_local;
    let b = rj.r * b_local;
    let da: Vec<Vector3<f64>> = (0..3).map(|k| ri.d[k] * a_local).collect();
    let db: Vec<Vector3<f64>> = (0..3).map(|k| rj.d[k] * b_local).collect();

    sink.c[row] += a.dot(&b);
    if sink.j.is_some() {
        for k in 0..3 {
            sink.jac(row, bi + k, da[k].dot(&b));
            sink.jac(row, bj + k, a.dot(&db[k]));
        }
    }
    if sink.sd.is_some() {
        for k in 0..3 {
            for l in k..3 {
                sink.ss(row, bi + k, bi + l, (ri.dd[k][l] * a_local).dot(&b));
                sink.ss(row, bj + k, bj + l, a.dot(&(rj.dd[k][l] * b_local)));
            }
            for l in 0..3 {
                sink.ss(row, bi + k, bj + l, da[k].dot(&db[l]));
            }
        }
    }
}

/// Adds the point-on-line row `c = (R_i w) . (p_j - p_i)` at `row`.
fn add_point_line_row(
    sink: &mut Sink,
    cache: &KinCache,
    row: usize,
    body_i: usize,
    w_local: &Vector3<f64>,
    p_i_local: &Vector3<f64>,
    body_j: usize,
    p_j_local: &Vector3<f64>,
) {
    debug_assert_ne!(body_i, body_j);
    let ri = &cache.rots[body_i];
    let rj = &cache.rots[body_j];
    let bi = 6 * body_i;
    let bj = 6 * body_j;
    let w = ri.r * w_local;
    let p_i = ri.r * p_i_local + cache.ts[body_i];
    let p_j = rj.r * p_j_local + cache.ts[body_j];
    let d = p_j - p_i;
    let dw: Vec<Vector3<f64>> = (0..3).map(|k| ri.d[k] * w_local).collect();
    let dpi: Vec<Vector3<f64>> = (0..3).map(|k| ri.d[k] * p_i_local).collect();
    let dpj: Vec<Vector3<f64>> = (0..3).map(|k| rj.d[k] * p_j_local).collect();

    sink.c[row] += w.dot(&d);
    if sink.j.is_some() {
        for k in 0..3 {
            sink.jac(row, bi + k, dw[k].dot(&d) - w.dot(&dpi[k]));
            sink.jac(row, bj + k, w.dot(&dpj[k]));
        }
        for c in 0..3 {
            sink.jac(row, bi + 3 + c, -w[c]);
            sink.jac(row, bj + 3 + c, w[c]);
        }
    }
    if sink.sd.is_some() {
        for k in 0..3 {
            for l in k..3 {
                let v = (ri.dd[k][l] * w_local).dot(&d)
                    - dw[k].dot(&dpi[l])
                    - dw[l].dot(&dpi[k])
                    - w.dot(&(ri.dd[k][l] * p_i_local));
                sink.ss(row, bi + k, bi + l, v);
                sink.ss(row, bj + k, bj + l, w.dot(&(rj.dd[k][l] * p_j_local)));
            }
            for l in 0..3 {
                sink.ss(row, bi + k, bj + l, dw[k].dot(&dpj[l]));
            }
            for c in 0..3 {
                sink.ss(row, bi + k, bi + 3 + c, -dw[k][c]);
                sink.ss(row, bi + k, bj + 3 + c, dw[k][c]);
            }
        }
    }
}

fn eval_block(block: &ConstraintBlock, cache: &KinCache, u: &DVector<f64>, sink: &mut Sink) {
    let row = block.row_offset;
    match &block.data {
        BlockData::Spherical { body_i, body_j, p_i, p_j } => {
            add_frame_term(sink, cache, row, *body_j, p_j, 1.0, true);
            add_frame_term(sink, cache, row, *body_i, p_i, -1.0, true);
        }
        BlockData::Revolute { body_i, body_j, p_i, p_j, axis_i, axis_j } => {
            add_frame_term(sink, cache, row, *body_j, p_j, 1.0, true);
            add_frame_term(sink, cache, row, *body_i, p_i, -1.0, true);
            add_frame_term(sink, cache, row + 3, *body_j, axis_j, 1.0, false);
            add_frame_term(sink, cache, row + 3, *body_i, axis_i, -1.0, false);
        }
        BlockData::Fixed { body_i, body_j, p_i, p_j, a_i, a_j, b_i, b_j } => {
            add_frame_term(sink, cache, row, *body_j, p_j, 1.0, true);
            add_frame_term(sink, cache, row, *body_i, p_i, -1.0, true);
            add_frame_term(sink, cache, row + 3, *body_j, a_j, 1.0, false);
            add_frame_term(sink, cache, row + 3, *body_i, a_i, -1.0, false);
            add_frame_term(sink, cache, row + 6, *body_j, b_j, 1.0, false);
            add_frame_term(sink, cache, row + 6, *body_i, b_i, -1.0, false);
        }
        BlockData::Universal { body_i, body_j, p_i, p_j, axis_i, axis_j } => {
            add_frame_term(sink, cache, row, *body_j, p_j, 1.0, true);
            add_frame_term(sink, cache, row, *body_i, p_i, -1.0, true);
            add_dot_row(sink, cache, row + 3, *body_i, axis_i, *body_j, axis_j);
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
        } => {
            add_frame_term(sink, cache, row, *body_j, slide_j, 1.0, false);
            add_frame_term(sink, cache, row, *body_i, slide_i, -1.0, false);
            add_frame_term(sink, cache, row + 3, *body_j, normal_j, 1.0, false);
            add_frame_term(sink, cache, row + 3, *body_i, normal_i, -1.0, false);
            let binormal_i = slide_i.cross(normal_i);
            add_point_line_row(sink, cache, row + 6, *body_i, normal_i, p_i, *body_j, p_j);
            add_point_line_row(sink, cache, row + 7, *body_i, &binormal_i, p_i, *body_j, p_j);
        }
        BlockData::PlanarBase { body } => {
            let base = 6 * body;
            sink.c[row] += cache.ts[*body].z;
            sink.jac(row, base + 5, 1.0);
            let normal = Vector3::z();
            add_frame_term(sink, cache, row + 1, *body, &normal, 1.0, false);
            for c in 0..3 {
                sink.c[row + 1 + c] -= normal[c];
            }
        }
        BlockData::MotorXy { body, slot_x, slot_y } => {
            let base = 6 * body;
            sink.c[row] += cache.ts[*body].x - u[*slot_x];
            sink.c[row + 1] += cache.ts[*body].y - u[*slot_y];
            sink.jac(row, base + 3, 1.0);
            sink.jac(row + 1, base + 4, 1.0);
            sink.jac_u(row, *slot_x, -1.0);
            sink.jac_u(row + 1, *slot_y, -1.0);
        }
        BlockData::MotorZ { body, slot_theta } => {
            let base = 6 * body;
            let theta = u[*slot_theta];
            let vp = rot_z_matrix(theta, 0) * Vector3::x();
            let dvp = rot_z_matrix(theta, 1) * Vector3::x();
            add_frame_term(sink, cache, row, *body, &vp, 1.0, false);
            sink.c[row] -= 1.0; // minus world x axis
            let rd = &cache.rots[*body];
            if sink.ju.is_some() {
                let du = rd.r * dvp;
                for c in 0..3 {
                    sink.jac_u(row + c, *slot_theta, du[c]);
                }
            }
            if sink.sd.is_some() {
                for k in 0..3 {
                    let v = rd.d[k] * dvp;
                    for c in 0..3 {
                        sink.su(row + c, base + k, *slot_theta, v[c]);
                    }
                }
            }
        }
    }
}

fn check_dims(
    blocks: &[ConstraintBlock],
    cache: &KinCache,
    u: &DVector<f64>,
) -> Result<(), ConstraintError> {
    let n_b = cache.n_bodies();
    for (idx, block) in blocks.iter().enumerate() {
        let (bi, bj) = block.bodies();
        for body in std::iter::once(bi).chain(bj) {
            if body >= n_b {
                return Err(ConstraintError::BodyIndex { block: idx, body, n_b });
            }
        }
        for slot in block.control_slots() {
            if slot >= u.len() {
                return Err(ConstraintError::ControlDimension {
                    block: idx,
                    got: u.len(),
                    slot,
                });
            }
        }
    }
    Ok(())
}

/// Evaluates all blocks in one pass; the derivative outputs are optional.
pub fn evaluate(
    blocks: &[ConstraintBlock],
    cache: &KinCache,
    u: &DVector<f64>,
    n_u: usize,
    want_jac_s: bool,
    want_jac_u: bool,
    want_second: bool,
) -> Result<Evaluation, ConstraintError> {
    check_dims(blocks, cache, u)?;
    let m = total_rows(blocks);
    let n = 6 * cache.n_bodies();
    let mut c = DVector::zeros(m);
    let mut j = if want_jac_s { Some(DMatrix::zeros(m, n)) } else { None };
    let mut ju = if want_jac_u { Some(DMatrix::zeros(m, n_u)) } else { None };
    let mut sd = if want_second { Some(SecondDerivs::with_rows(m)) } else { None };
    {
        let mut sink = Sink {
            c: &mut c,
            j: j.as_mut(),
            ju: ju.as_mut(),
            sd: sd.as_mut(),
        };
        for block in blocks {
            eval_block(block, cache, u, &mut sink);
        }
    }
    Ok(Evaluation {
        c,
        jac_s: j,
        jac_u: ju,
        second: sd,
    })
}

pub fn assemble_c(
    blocks: &[ConstraintBlock],
    cache: &KinCache,
    u: &DVector<f64>,
    n_u: usize,
) -> Result<DVector<f64>, ConstraintError> {
    Ok(evaluate(blocks, cache, u, n_u, false, false, false)?.c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rigidbody::RigidBodyState;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::FRAC_PI_2;

    fn state_vec(states: &[RigidBodyState]) -> DVector<f64> {
        let mut s = DVector::zeros(6 * states.len());
        for (b, st) in states.iter().enumerate() {
            st.write_slice(&mut s.as_mut_slice()[6 * b..6 * b + 6]);
        }
        s
    }

    fn eval_c(blocks: &[ConstraintBlock], s: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let cache = KinCache::new(s);
        assemble_c(blocks, &cache, u, u.len()).unwrap()
    }

    fn numeric_rank(m: &DMatrix<f64>, tol: f64) -> usize {
        m.clone().svd(false, false).singular_values.iter().filter(|&&v| v > tol).count()
    }

    fn revolute_block() -> ConstraintBlock {
        ConstraintBlock {
            data: BlockData::Revolute {
                body_i: 0,
                body_j: 1,
                p_i: Vector3::zeros(),
                p_j: Vector3::zeros(),
                axis_i: Vector3::z(),
                axis_j: Vector3::z(),
            },
            row_offset: 0,
        }
    }

    #[test]
    fn revolute_assembled_is_zero() {
        let s = state_vec(&[RigidBodyState::identity(), RigidBodyState::identity()]);
        let c = eval_c(&[revolute_block()], &s, &DVector::zeros(0));
        assert_abs_diff_eq!(c.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn revolute_translated_j_follows_formula() {
        // C = quantity_j - quantity_i, so moving body j by +0.1 along x gives +0.1.
        let s = state_vec(&[
            RigidBodyState::identity(),
            RigidBodyState::from_translation(Vector3::new(0.1, 0.0, 0.0)),
        ]);
        let c = eval_c(&[revolute_block()], &s, &DVector::zeros(0));
        let expected = DVector::from_vec(vec![0.1, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(c, expected, epsilon = 1e-15);
    }

    #[test]
    fn revolute_jacobian_rank_five() {
        // generic assembled configuration: both bodies share anchor and axis
        let st_i = RigidBodyState {
            gamma: 0.4,
            beta: -0.3,
            alpha: 0.2,
            t: Vector3::new(0.1, 0.2, 0.3),
        };
        let anchor_w = Vector3::new(0.5, -0.1, 0.7);
        let axis_w = (st_i.rotation() * Vector3::z()).normalize();
        let st_j = RigidBodyState {
            gamma: 0.4 + 0.9, // rotated about the shared z-ish axis? keep axes equal instead
            beta: -0.3,
            alpha: 0.2,
            t: Vector3::new(-0.3, 0.4, 0.0),
        };
        // local anchors and axes consistent with the world anchor/axis
        let p_i = st_i.rotation().transpose() * (anchor_w - st_i.t);
        let p_j = st_j.rotation().transpose() * (anchor_w - st_j.t);
        let axis_i = st_i.rotation().transpose() * axis_w;
        let axis_j = st_j.rotation().transpose() * axis_w;
        let block = ConstraintBlock {
            data: BlockData::Revolute { body_i: 0, body_j: 1, p_i, p_j, axis_i, axis_j },
            row_offset: 0,
        };
        let s = state_vec(&[st_i, st_j]);
        let cache = KinCache::new(&s);
        let u = DVector::zeros(0);
        let ev = evaluate(&[block], &cache, &u, 0, true, false, false).unwrap();
        assert!(ev.c.norm() < 1e-12);
        assert_eq!(numeric_rank(ev.jac_s.as_ref().unwrap(), 1e-8), 5);
    }

    #[test]
    fn spherical_rotation_freedom_and_rank() {
        let anchor_w = Vector3::new(0.2, 0.1, 0.5);
        let st_i = RigidBodyState::identity();
        let st_j = RigidBodyState {
            gamma: 0.7,
            beta: 0.3,
            alpha: -0.4,
            t: Vector3::new(0.1, -0.2, 0.6),
        };
        let p_i = anchor_w;
        let p_j = st_j.rotation().transpose() * (anchor_w - st_j.t);
        let block = ConstraintBlock {
            data: BlockData::Spherical { body_i: 0, body_j: 1, p_i, p_j },
            row_offset: 0,
        };
        let s = state_vec(&[st_i, st_j]);
        let cache = KinCache::new(&s);
        let ev = evaluate(&[block], &cache, &DVector::zeros(0), 0, true, false, false).unwrap();
        assert!(ev.c.norm() < 1e-14, "rotated about own anchor must stay zero");
        assert_eq!(numeric_rank(ev.jac_s.as_ref().unwrap(), 1e-8), 3);
    }

    #[test]
    fn fixed_rows_and_rank() {
        let block = ConstraintBlock {
            data: BlockData::Fixed {
                body_i: 0,
                body_j: 1,
                p_i: Vector3::new(0.1, 0.0, 0.0),
                p_j: Vector3::new(0.1, 0.0, 0.0),
                a_i: Vector3::x(),
                a_j: Vector3::x(),
                b_i: Vector3::y(),
                b_j: Vector3::y(),
            },
            row_offset: 0,
        };
        let s = state_vec(&[RigidBodyState::identity(), RigidBodyState::identity()]);
        let cache = KinCache::new(&s);
        let ev = evaluate(&[block.clone()], &cache, &DVector::zeros(0), 0, true, false, false).unwrap();
        assert!(ev.c.norm() < 1e-15);
        assert_eq!(numeric_rank(ev.jac_s.as_ref().unwrap(), 1e-8), 6);

        // relative rotation about a_i leaves point and a rows zero, b rows nonzero
        let rot = crate::rigidbody::rotation_matrix(0.0, 0.0, 0.1);
        let st_j = RigidBodyState {
            gamma: 0.0,
            beta: 0.0,
            alpha: 0.1,
            // keep the anchor fixed: t = p_w - R * p_local
            t: Vector3::new(0.1, 0.0, 0.0) - rot * Vector3::new(0.1, 0.0, 0.0),
        };
        let s = state_vec(&[RigidBodyState::identity(), st_j]);
        let c = eval_c(&[block], &s, &DVector::zeros(0));
        assert!(c.rows(0, 6).norm() < 1e-12, "point and a-axis rows stay zero");
        assert!(c.rows(6, 3).norm() > 1e-3, "b-axis rows must be violated");
    }

    #[test]
    fn planar_base_examples() {
        let block = ConstraintBlock { data: BlockData::PlanarBase { body: 0 }, row_offset: 0 };
        let s = state_vec(&[RigidBodyState::identity()]);
        let c = eval_c(&[block.clone()], &s, &DVector::zeros(0));
        assert_abs_diff_eq!(c.norm(), 0.0, epsilon = 1e-15);

        let lifted = state_vec(&[RigidBodyState::from_translation(Vector3::new(0.0, 0.0, 0.05))]);
        let c = eval_c(&[block.clone()], &lifted, &DVector::zeros(0));
        assert_abs_diff_eq!(c, DVector::from_vec(vec![0.05, 0.0, 0.0, 0.0]), epsilon = 1e-15);

        let tilted = RigidBodyState { gamma: 0.0, beta: 0.0, alpha: 0.1, t: Vector3::zeros() };
        let expected = tilted.rotation() * Vector3::z() - Vector3::z();
        let c = eval_c(&[block], &state_vec(&[tilted]), &DVector::zeros(0));
        assert_abs_diff_eq!(c[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(Vector3::new(c[1], c[2], c[3]), expected, epsilon = 1e-14);
    }

    #[test]
    fn planar_base_assembled_rank_three() {
        let block = ConstraintBlock { data: BlockData::PlanarBase { body: 0 }, row_offset: 0 };
        let s = state_vec(&[RigidBodyState::identity()]);
        let cache = KinCache::new(&s);
        let ev = evaluate(&[block], &cache, &DVector::zeros(0), 0, true, false, false).unwrap();
        assert_eq!(numeric_rank(ev.jac_s.as_ref().unwrap(), 1e-8), 3);
    }

    #[test]
    fn motor_xy_examples() {
        let block = ConstraintBlock {
            data: BlockData::MotorXy { body: 0, slot_x: 0, slot_y: 1 },
            row_offset: 0,
        };
        let s = state_vec(&[RigidBodyState::from_translation(Vector3::new(1.0, 2.0, 0.0))]);
        let u = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let c = eval_c(&[block.clone()], &s, &u);
        assert_abs_diff_eq!(c.norm(), 0.0, epsilon = 1e-15);

        let u0 = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let c = eval_c(&[block.clone()], &s, &u0);
        assert_abs_diff_eq!(c, DVector::from_vec(vec![1.0, 2.0]), epsilon = 1e-15);

        let cache = KinCache::new(&s);
        let ev = evaluate(&[block], &cache, &u0, 3, false, true, false).unwrap();
        let ju = ev.jac_u.unwrap();
        assert_abs_diff_eq!(ju[(0, 0)], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ju[(1, 1)], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ju[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn motor_z_examples() {
        let block = ConstraintBlock {
            data: BlockData::MotorZ { body: 0, slot_theta: 2 },
            row_offset: 0,
        };
        let s = state_vec(&[RigidBodyState::identity()]);
        let u = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let c = eval_c(&[block.clone()], &s, &u);
        assert_abs_diff_eq!(c.norm(), 0.0, epsilon = 1e-15);

        // base yaw 0.3 balanced by theta = -0.3
        let yawed = state_vec(&[RigidBodyState {
            gamma: 0.3,
            beta: 0.0,
            alpha: 0.0,
            t: Vector3::zeros(),
        }]);
        let u = DVector::from_vec(vec![0.0, 0.0, -0.3]);
        let c = eval_c(&[block.clone()], &yawed, &u);
        assert!(c.norm() < 1e-15);

        // dC/dtheta against central differences
        let h = 1e-6;
        let cache = KinCache::new(&yawed);
        let ev = evaluate(&[block.clone()], &cache, &u, 3, false, true, false).unwrap();
        let mut up = u.clone();
        up[2] += h;
        let mut um = u.clone();
        um[2] -= h;
        let fd = (eval_c(&[block.clone()], &yawed, &up) - eval_c(&[block], &yawed, &um)) / (2.0 * h);
        for c in 0..3 {
            let a = ev.jac_u.as_ref().unwrap()[(c, 2)];
            assert!((a - fd[c]).abs() / a.abs().max(1.0) < 1e-6);
        }
    }

    #[test]
    fn motor_xy_second_derivs_are_zero() {
        let block = ConstraintBlock {
            data: BlockData::MotorXy { body: 0, slot_x: 0, slot_y: 1 },
            row_offset: 0,
        };
        let s = state_vec(&[RigidBodyState::identity()]);
        let cache = KinCache::new(&s);
        let ev = evaluate(&[block], &cache, &DVector::zeros(3), 3, false, false, true).unwrap();
        let sd = ev.second.unwrap();
        assert!(sd.ss.iter().all(|r| r.is_empty()));
        assert!(sd.su.iter().all(|r| r.is_empty()));
    }

    #[test]
    fn universal_and_prismatic_assembled_ranks() {
        // universal at a generic pose
        let uni = ConstraintBlock {
            data: BlockData::Universal {
                body_i: 0,
                body_j: 1,
                p_i: Vector3::new(0.2, 0.0, 0.1),
                p_j: Vector3::new(-0.1, 0.0, 0.0),
                axis_i: Vector3::x(),
                axis_j: Vector3::y(),
            },
            row_offset: 0,
        };
        let st_j = RigidBodyState::from_translation(Vector3::new(0.3, 0.0, 0.1));
        let s = state_vec(&[RigidBodyState::identity(), st_j]);
        let cache = KinCache::new(&s);
        let ev = evaluate(&[uni], &cache, &DVector::zeros(0), 0, true, false, false).unwrap();
        assert!(ev.c.norm() < 1e-14);
        assert_eq!(numeric_rank(ev.jac_s.as_ref().unwrap(), 1e-8), 4);

        // prismatic sliding along z
        let pris = ConstraintBlock {
            data: BlockData::Prismatic {
                body_i: 0,
                body_j: 1,
                p_i: Vector3::zeros(),
                p_j: Vector3::zeros(),
                slide_i: Vector3::z(),
                slide_j: Vector3::z(),
                normal_i: Vector3::x(),
                normal_j: Vector3::x(),
            },
            row_offset: 0,
        };
        // body j slid along z: still satisfied
        let s = state_vec(&[
            RigidBodyState::identity(),
            RigidBodyState::from_translation(Vector3::new(0.0, 0.0, 0.4)),
        ]);
        let cache = KinCache::new(&s);
        let ev = evaluate(&[pris], &cache, &DVector::zeros(0), 0, true, false, false).unwrap();
        assert!(ev.c.norm() < 1e-14, "sliding must stay feasible");
        assert_eq!(numeric_rank(ev.jac_s.as_ref().unwrap(), 1e-8), 5);
    }

    #[test]
    fn quarter_turn_yaw_spherical() {
        // sanity: anchor at (1,0,0) on a body yawed 90 deg lands at (0,1,0)
        let st = RigidBodyState {
            gamma: FRAC_PI_2,
            beta: 0.0,
            alpha: 0.0,
            t: Vector3::zeros(),
        };
        let block = ConstraintBlock {
            data: BlockData::Spherical {
                body_i: 0,
                body_j: 1,
                p_i: Vector3::zeros(),
                p_j: Vector3::x(),
            },
            row_offset: 0,
        };
        let s = state_vec(&[RigidBodyState::identity(), st]);
        let c = eval_c(&[block], &s, &DVector::zeros(0));
        assert_abs_diff_eq!(
            Vector3::new(c[0], c[1], c[2]),
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn dimension_errors_name_the_block() {
        let block = ConstraintBlock {
            data: BlockData::MotorXy { body: 0, slot_x: 0, slot_y: 4 },
            row_offset: 0,
        };
        let s = state_vec(&[RigidBodyState::identity()]);
        let cache = KinCache::new(&s);
        let err = evaluate(&[block], &cache, &DVector::zeros(3), 3, false, false, false).unwrap_err();
        assert!(matches!(err, ConstraintError::ControlDimension { block: 0, slot: 4, .. }));
    }

    // Finite-difference oracle over all derivative layers of a mixed block set.
    #[test]
    fn derivatives_match_finite_differences() {
        let blocks = vec![
            ConstraintBlock {
                data: BlockData::Revolute {
                    body_i: 0,
                    body_j: 1,
                    p_i: Vector3::new(0.1, 0.2, -0.1),
                    p_j: Vector3::new(-0.2, 0.05, 0.3),
                    axis_i: Vector3::z(),
                    axis_j: Vector3::new(0.0, 0.6, 0.8),
                },
                row_offset: 0,
            },
            ConstraintBlock {
                data: BlockData::Universal {
                    body_i: 1,
                    body_j: 2,
                    p_i: Vector3::new(0.3, 0.0, 0.0),
                    p_j: Vector3::new(0.0, 0.1, 0.2),
                    axis_i: Vector3::x(),
                    axis_j: Vector3::y(),
                },
                row_offset: 6,
            },
            ConstraintBlock {
                data: BlockData::Prismatic {
                    body_i: 0,
                    body_j: 2,
                    p_i: Vector3::new(0.0, 0.1, 0.0),
                    p_j: Vector3::new(0.2, 0.0, 0.1),
                    slide_i: Vector3::z(),
                    slide_j: Vector3::z(),
                    normal_i: Vector3::x(),
                    normal_j: Vector3::x(),
                },
                row_offset: 10,
            },
            ConstraintBlock { data: BlockData::PlanarBase { body: 0 }, row_offset: 18 },
            ConstraintBlock {
                data: BlockData::MotorXy { body: 0, slot_x: 0, slot_y: 1 },
                row_offset: 22,
            },
            ConstraintBlock {
                data: BlockData::MotorZ { body: 0, slot_theta: 2 },
                row_offset: 24,
            },
        ];
        let m = total_rows(&blocks);
        assert_eq!(m, 27);

        let mut seed = 7u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let h = 1e-5;
        for _ in 0..20 {
            let s = DVector::from_fn(18, |_, _| next());
            let u = DVector::from_fn(3, |_, _| next());
            let cache = KinCache::new(&s);
            let ev = evaluate(&blocks, &cache, &u, 3, true, true, true).unwrap();
            let j = ev.jac_s.unwrap();
            let ju = ev.jac_u.unwrap();
            let sd = ev.second.unwrap();

            // d C / d s
            for col in 0..18 {
                let mut sp = s.clone();
                sp[col] += h;
                let mut sm = s.clone();
                sm[col] -= h;
                let cp = assemble_c(&blocks, &KinCache::new(&sp), &u, 3).unwrap();
                let cm = assemble_c(&blocks, &KinCache::new(&sm), &u, 3).unwrap();
                let fd = (cp - cm) / (2.0 * h);
                for r in 0..m {
                    let a = j[(r, col)];
                    assert!(
                        (a - fd[r]).abs() / a.abs().max(1.0) < 1e-6,
                        "jac_s mismatch row {r} col {col}: {a} vs {}",
                        fd[r]
                    );
                }
            }
            // d C / d u
            for col in 0..3 {
                let mut up = u.clone();
                up[col] += h;
                let mut um = u.clone();
                um[col] -= h;
                let cp = assemble_c(&blocks, &cache, &up, 3).unwrap();
                let cm = assemble_c(&blocks, &cache, &um, 3).unwrap();
                let fd = (cp - cm) / (2.0 * h);
                for r in 0..m {
                    let a = ju[(r, col)];
                    assert!((a - fd[r]).abs() / a.abs().max(1.0) < 1e-6, "jac_u row {r} col {col}");
                }
            }
            // second derivatives against finite differences of jac_s
            for col in 0..18 {
                let mut sp = s.clone();
                sp[col] += h;
                let mut sm = s.clone();
                sm[col] -= h;
                let jp = evaluate(&blocks, &KinCache::new(&sp), &u, 3, true, true, false)
                    .unwrap();
                let jm = evaluate(&blocks, &KinCache::new(&sm), &u, 3, true, true, false)
                    .unwrap();
                let fd_j = (jp.jac_s.as_ref().unwrap() - jm.jac_s.as_ref().unwrap()) / (2.0 * h);
                let fd_ju = (jp.jac_u.as_ref().unwrap() - jm.jac_u.as_ref().unwrap()) / (2.0 * h);
                for r in 0..m {
                    let dense = sd.dense_ss_row(r, 18);
                    for col2 in 0..18 {
                        let a = dense[(col, col2)];
                        let f = fd_j[(r, col2)];
                        assert!(
                            (a - f).abs() / a.abs().max(1.0) < 1e-5,
                            "d2C/ds2 row {r} ({col},{col2}): {a} vs {f}"
                        );
                    }
                    let dense_su = sd.dense_su_row(r, 18, 3);
                    for uc in 0..3 {
                        let a = dense_su[(col, uc)];
                        let f = fd_ju[(r, uc)];
                        assert!(
                            (a - f).abs() / a.abs().max(1.0) < 1e-5,
                            "d2C/dsdu row {r} ({col},{uc}): {a} vs {f}"
                        );
                    }
                }
            }
        }
    }
}
