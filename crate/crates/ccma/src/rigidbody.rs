//! Euler-angle rigid body poses and analytic rotation derivatives.
//!
//! A body pose is three Euler angles plus a translation. The rotation is the
//! extrinsic Z(gamma)-Y(beta)-X(alpha) composition `R = Rz(gamma) * Ry(beta) * Rx(alpha)`.
//! Angles are unconstrained coordinates; no wrapping to a principal range is done.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Pose of one rigid body: three Euler angles (rad) and a translation (m).
///
/// State layout used throughout the system vector: `[gamma, beta, alpha, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyState {
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub t: Vector3<f64>,
}

impl RigidBodyState {
    pub fn identity() -> Self {
        Self {
            gamma: 0.0,
            beta: 0.0,
            alpha: 0.0,
            t: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            gamma: 0.0,
            beta: 0.0,
            alpha: 0.0,
            t,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.gamma, self.beta, self.alpha)
    }

    /// Read one body's pose out of the stacked system state at `6 * body_index`.
    pub fn from_slice(s: &[f64]) -> Self {
        Self {
            gamma: s[0],
            beta: s[1],
            alpha: s[2],
            t: Vector3::new(s[3], s[4], s[5]),
        }
    }

    pub fn write_slice(&self, s: &mut [f64]) {
        s[0] = self.gamma;
        s[1] = self.beta;
        s[2] = self.alpha;
        s[3] = self.t.x;
        s[4] = self.t.y;
        s[5] = self.t.z;
    }
}

/// A point expressed in a body's local frame (m).
pub type LocalPoint = Vector3<f64>;
/// A free vector expressed in a body's local frame (unit for axes).
pub type LocalVector = Vector3<f64>;

/// `d^order/dθ^order` of the elementary rotation about z.
fn rot_z(theta: f64, order: u32) -> Matrix3<f64> {
    // Each differentiation advances the phase by pi/2 in the trig entries.
    let phase = theta + order as f64 * std::f64::consts::FRAC_PI_2;
    let (s, c) = phase.sin_cos();
    let id = if order == 0 { 1.0 } else { 0.0 };
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, id)
}

fn rot_y(theta: f64, order: u32) -> Matrix3<f64> {
    let phase = theta + order as f64 * std::f64::consts::FRAC_PI_2;
    let (s, c) = phase.sin_cos();
    let id = if order == 0 { 1.0 } else { 0.0 };
    Matrix3::new(c, 0.0, s, 0.0, id, 0.0, -s, 0.0, c)
}

fn rot_x(theta: f64, order: u32) -> Matrix3<f64> {
    let phase = theta + order as f64 * std::f64::consts::FRAC_PI_2;
    let (s, c) = phase.sin_cos();
    let id = if order == 0 { 1.0 } else { 0.0 };
    Matrix3::new(id, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Composed rotation `Rz(gamma) * Ry(beta) * Rx(alpha)`.
pub fn rotation_matrix(gamma: f64, beta: f64, alpha: f64) -> Matrix3<f64> {
    rot_z(gamma, 0) * rot_y(beta, 0) * rot_x(alpha, 0)
}

/// In-plane rotation of a base-frame vector by the commanded heading angle,
/// used by the rotary motor constraint.
pub fn rot_z_matrix(theta: f64, order: u32) -> Matrix3<f64> {
    rot_z(theta, order)
}

/// Rotation matrix together with its first and second derivatives with
/// respect to the three Euler angles. Index order is (gamma, beta, alpha).
#[derive(Debug, Clone)]
pub struct RotationDerivs {
    pub r: Matrix3<f64>,
    pub d: [Matrix3<f64>; 3],
    /// Full symmetric storage: `dd[k][l] = d2R / d angle_k d angle_l`.
    pub dd: [[Matrix3<f64>; 3]; 3],
}

/// Analytic first and second derivatives of the rotation matrix.
pub fn rotation_derivatives(state: &RigidBodyState) -> RotationDerivs {
    let z = [
        rot_z(state.gamma, 0),
        rot_z(state.gamma, 1),
        rot_z(state.gamma, 2),
    ];
    let y = [
        rot_y(state.beta, 0),
        rot_y(state.beta, 1),
        rot_y(state.beta, 2),
    ];
    let x = [
        rot_x(state.alpha, 0),
        rot_x(state.alpha, 1),
        rot_x(state.alpha, 2),
    ];

    let r = z[0] * y[0] * x[0];
    let d = [z[1] * y[0] * x[0], z[0] * y[1] * x[0], z[0] * y[0] * x[1]];
    let mut dd = [[Matrix3::zeros(); 3]; 3];
    // Orders of differentiation of the (z, y, x) factors for each angle pair.
    for k in 0..3 {
        for l in k..3 {
            let mut ord = [0u32; 3];
            ord[k] += 1;
            ord[l] += 1;
            let m = rot_z(state.gamma, ord[0])
                * rot_y(state.beta, ord[1])
                * rot_x(state.alpha, ord[2]);
            dd[k][l] = m;
            dd[l][k] = m;
        }
    }
    RotationDerivs { r, d, dd }
}

/// `p = R * p_local + t`
pub fn transform_point(state: &RigidBodyState, p_local: &LocalPoint) -> Vector3<f64> {
    state.rotation() * p_local + state.t
}

/// `v = R * v_local` (translation does not apply to free vectors)
pub fn transform_vector(state: &RigidBodyState, v_local: &LocalVector) -> Vector3<f64> {
    state.rotation() * v_local
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn max_abs(m: &Matrix3<f64>) -> f64 {
        m.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
    }

    #[test]
    fn zero_angles_give_identity() {
        assert_eq!(rotation_matrix(0.0, 0.0, 0.0), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = rotation_matrix(FRAC_PI_2, 0.0, 0.0);
        let v = r * Vector3::x();
        assert_abs_diff_eq!(v, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn rotation_is_orthonormal() {
        let r = rotation_matrix(0.3, -0.2, 0.7);
        let err = max_abs(&(r.transpose() * r - Matrix3::identity()));
        assert!(err < 1e-14, "orthonormality error {err}");
        assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn orthonormal_over_angle_range() {
        // deterministic sweep over [-2pi, 2pi]
        let mut k = 0u64;
        let mut next = || {
            k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (k >> 11) as f64 / (1u64 << 53) as f64 * 4.0 * PI - 2.0 * PI
        };
        for _ in 0..100 {
            let r = rotation_matrix(next(), next(), next());
            assert!(max_abs(&(r.transpose() * r - Matrix3::identity())) < 1e-12);
        }
    }

    #[test]
    fn transform_point_identity_and_translation() {
        let p = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(transform_point(&RigidBodyState::identity(), &p), p);

        let st = RigidBodyState::from_translation(Vector3::new(5.0, 0.0, 0.0));
        assert_eq!(
            transform_point(&st, &Vector3::x()),
            Vector3::new(6.0, 0.0, 0.0)
        );
    }

    #[test]
    fn transform_point_rotation_then_translation() {
        let st = RigidBodyState {
            gamma: FRAC_PI_2,
            beta: 0.0,
            alpha: 0.0,
            t: Vector3::new(0.0, 0.0, 1.0),
        };
        let p = transform_point(&st, &Vector3::x());
        assert_abs_diff_eq!(p, Vector3::new(0.0, 1.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn transform_vector_ignores_translation() {
        let mut st = RigidBodyState::from_translation(Vector3::new(9.0, 9.0, 9.0));
        assert_eq!(transform_vector(&st, &Vector3::z()), Vector3::z());
        assert_eq!(transform_vector(&st, &Vector3::x()), Vector3::x());
        st.gamma = PI;
        assert_abs_diff_eq!(
            transform_vector(&st, &Vector3::x()),
            Vector3::new(-1.0, 0.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn point_minus_origin_equals_vector() {
        let st = RigidBodyState {
            gamma: 0.4,
            beta: -1.1,
            alpha: 0.9,
            t: Vector3::new(0.3, -0.2, 0.5),
        };
        let p = Vector3::new(0.2, -0.7, 1.3);
        let diff = transform_point(&st, &p) - transform_point(&st, &Vector3::zeros());
        assert_abs_diff_eq!(diff, transform_vector(&st, &p), epsilon = 1e-14);
    }

    #[test]
    fn first_derivative_at_zero_is_z_generator() {
        let d = rotation_derivatives(&RigidBodyState::identity());
        let v = d.d[0] * Vector3::x();
        assert_abs_diff_eq!(v, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn mixed_partials_are_symmetric() {
        let st = RigidBodyState {
            gamma: 0.5,
            beta: -0.8,
            alpha: 1.2,
            t: Vector3::zeros(),
        };
        let d = rotation_derivatives(&st);
        for k in 0..3 {
            for l in 0..3 {
                assert_eq!(d.dd[k][l], d.dd[l][k]);
            }
        }
    }

    // Central finite-difference oracle for the rotation derivatives.
    fn fd_first(st: &RigidBodyState, k: usize, h: f64) -> Matrix3<f64> {
        let mut a = [st.gamma, st.beta, st.alpha];
        a[k] += h;
        let rp = rotation_matrix(a[0], a[1], a[2]);
        a[k] -= 2.0 * h;
        let rm = rotation_matrix(a[0], a[1], a[2]);
        (rp - rm) / (2.0 * h)
    }

    fn fd_second(st: &RigidBodyState, k: usize, l: usize, h: f64) -> Matrix3<f64> {
        let shift = |dk: f64, dl: f64| {
            let mut a = [st.gamma, st.beta, st.alpha];
            a[k] += dk;
            a[l] += dl;
            rotation_matrix(a[0], a[1], a[2])
        };
        if k == l {
            (shift(h, 0.0) - 2.0 * shift(0.0, 0.0) + shift(-h, 0.0)) / (h * h)
        } else {
            (shift(h, h) - shift(h, -h) - shift(-h, h) + shift(-h, -h)) / (4.0 * h * h)
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        let mut seed = 42u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
            (seed >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..100 {
            let st = RigidBodyState {
                gamma: next(),
                beta: next(),
                alpha: next(),
                t: Vector3::zeros(),
            };
            let d = rotation_derivatives(&st);
            for k in 0..3 {
                let fd = fd_first(&st, k, h);
                let err = max_abs(&(d.d[k] - fd));
                assert!(err < 1e-6, "first deriv {k} err {err}");
                for l in 0..3 {
                    let fd2 = fd_second(&st, k, l, 1e-4);
                    let err = max_abs(&(d.dd[k][l] - fd2));
                    assert!(err < 1e-5, "second deriv ({k},{l}) err {err}");
                }
            }
        }
    }
}
