//! Omnidirectional base execution layer: inverse wheel kinematics for
//! three-wheeled Swedish-wheel bases, a PI pose tracker producing body-frame
//! twists, and an execution simulator that replays a tracked trajectory with
//! actuation noise and reports the resulting open-loop end-effector error.

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::assembly::SceneModel;
use crate::constraints::ControlVector;
use crate::forward_solver::{solve_fk, FkConfig};
use crate::ik_control::{ee_state, EeTarget, IkError, TrackRow};

/// Wheel layout of one omnidirectional base: three Swedish wheels tangent to a
/// circle of radius `mount_offset`, mounted at `mount_angles` around the body
/// frame.
#[derive(Debug, Clone)]
pub struct OmniBaseGeometry {
    pub wheel_radius: f64,
    pub mount_offset: f64,
    pub mount_angles: [f64; 3],
}

impl Default for OmniBaseGeometry {
    fn default() -> Self {
        Self {
            wheel_radius: 0.03,
            mount_offset: 0.12,
            mount_angles: [0.0, 120f64.to_radians(), 240f64.to_radians()],
        }
    }
}

/// Wheel angular velocities realizing a body-frame twist `(vx, vy, omega)`:
/// each wheel's drive direction is tangent to the mount circle, so
/// `phi_dot_i = (-sin(a_i) vx + cos(a_i) vy + L omega) / r`.
pub fn wheel_speeds_from_twist(geom: &OmniBaseGeometry, twist: &Vector3<f64>) -> [f64; 3] {
    let mut speeds = [0.0; 3];
    for (i, &a) in geom.mount_angles.iter().enumerate() {
        speeds[i] =
            (-a.sin() * twist.x + a.cos() * twist.y + geom.mount_offset * twist.z)
                / geom.wheel_radius;
    }
    speeds
}

#[derive(Debug, Clone)]
pub struct PiGains {
    pub kp_lin: f64,
    pub ki_lin: f64,
    pub kp_ang: f64,
    pub ki_ang: f64,
    /// Symmetric clamp on each integrator component (anti-windup).
    pub integrator_limit: f64,
}

impl Default for PiGains {
    fn default() -> Self {
        // kp * dt = 0.2 per update: fast settling with a comfortable
        // stability margin for the explicit integration
        // light integral action: the integrator adds a slow closed-loop mode
        // (~1 - ki*dt/kp per step) whose residue dominates the settled error,
        // so a large ki hurts zero-noise accuracy more than it helps
        Self { kp_lin: 20.0, ki_lin: 0.5, kp_ang: 20.0, ki_ang: 0.5, integrator_limit: 0.5 }
    }
}

/// Planar pose `(x, y, yaw)` of one base.
pub type BasePose = Vector3<f64>;

/// One PI update: returns the commanded body-frame twist and advances the
/// integrator. `error` conventions: the pose error is computed in the world
/// frame and rotated into the body frame so the twist is directly realizable
/// by the wheels.
pub fn pi_twist(
    gains: &PiGains,
    pose: &BasePose,
    target: &BasePose,
    integrator: &mut Vector3<f64>,
    dt: f64,
) -> Vector3<f64> {
    let (s, c) = pose.z.sin_cos();
    let ex = target.x - pose.x;
    let ey = target.y - pose.y;
    // wrap the yaw error to (-pi, pi]
    let mut eyaw = target.z - pose.z;
    eyaw = (eyaw + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
        - std::f64::consts::PI;
    let e_body = Vector3::new(c * ex + s * ey, -s * ex + c * ey, eyaw);

    *integrator += dt * e_body;
    let lim = gains.integrator_limit;
    for k in 0..3 {
        integrator[k] = integrator[k].clamp(-lim, lim);
    }

    Vector3::new(
        gains.kp_lin * e_body.x + gains.ki_lin * integrator.x,
        gains.kp_lin * e_body.y + gains.ki_lin * integrator.y,
        gains.kp_ang * e_body.z + gains.ki_ang * integrator.z,
    )
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub geometry: OmniBaseGeometry,
    pub gains: PiGains,
    /// Controller period (seconds).
    pub dt: f64,
    /// PI updates executed per trajectory row.
    pub settle_steps: usize,
    /// Standard deviation of the planar position noise added to each base at
    /// every sampled row (meters).
    pub noise_sigma: f64,
    pub seed: u64,
    pub fk: FkConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: OmniBaseGeometry::default(),
            gains: PiGains::default(),
            dt: 0.01,
            settle_steps: 40,
            noise_sigma: 0.005,
            seed: 0,
            fk: FkConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExecRow {
    /// Index into the tracked trajectory.
    pub step: usize,
    pub commanded_ee: EeTarget,
    pub simulated_ee: EeTarget,
    pub target_bases: Vec<BasePose>,
    pub simulated_bases: Vec<BasePose>,
    /// Wheel speeds commanded on the last controller update of this row.
    pub wheel_speeds: Vec<[f64; 3]>,
}

#[derive(Debug, Clone)]
pub struct ExecutionReport {
    pub rows: Vec<ExecRow>,
    /// Per-coordinate RMS of simulated-vs-commanded end-effector error over
    /// all rows (unmasked coordinates are zero).
    pub rmse: [f64; 6],
    /// Scalar translational RMS error (meters).
    pub pos_rmse: f64,
}

/// Replays a tracked trajectory on simulated omnidirectional bases.
///
/// Each base runs an independent PI pose tracker toward its per-row target;
/// Gaussian position noise models wheel slip and odometry drift. The resulting
/// end-effector pose is obtained by forward-solving the mechanism with every
/// base motor pinned at its simulated pose, i.e. the error is what the
/// platform would see with no end-effector feedback.
pub fn simulate_execution(
    model: &SceneModel,
    s_init: &DVector<f64>,
    u_init: &ControlVector,
    trajectory: &[TrackRow],
    cfg: &SimConfig,
) -> Result<ExecutionReport, IkError> {
    let n_m = model.n_bases();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma must be non-negative");

    // physical base poses start at the assembled configuration
    let mut poses: Vec<BasePose> = model
        .mobile_bases
        .iter()
        .map(|base| {
            let b = 6 * base.body;
            Vector3::new(s_init[b + 3], s_init[b + 4], s_init[b])
        })
        .collect();
    let mut integrators = vec![Vector3::zeros(); n_m];
    let mut s = s_init.clone();
    let mut u = u_init.values.clone();

    let mut rows = Vec::with_capacity(trajectory.len());
    let mut sq = [0.0f64; 6];
    let mut pos_sq = 0.0f64;

    for (step, row) in trajectory.iter().enumerate() {
        let targets: Vec<BasePose> =
            row.base_poses.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect();

        let mut wheel_speeds = vec![[0.0; 3]; n_m];
        for _ in 0..cfg.settle_steps {
            for k in 0..n_m {
                let twist =
                    pi_twist(&cfg.gains, &poses[k], &targets[k], &mut integrators[k], cfg.dt);
                wheel_speeds[k] = wheel_speeds_from_twist(&cfg.geometry, &twist);
                // integrate the body twist in the world frame
                let (sy, cy) = poses[k].z.sin_cos();
                poses[k].x += cfg.dt * (cy * twist.x - sy * twist.y);
                poses[k].y += cfg.dt * (sy * twist.x + cy * twist.y);
                poses[k].z += cfg.dt * twist.z;
            }
        }

        let sampled: Vec<BasePose> = poses
            .iter()
            .map(|p| {
                Vector3::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng), p.z)
            })
            .collect();

        // pin every motor at the sampled pose and forward-solve the mechanism
        for (k, p) in sampled.iter().enumerate() {
            u[3 * k] = p.x;
            u[3 * k + 1] = p.y;
            u[3 * k + 2] = -p.z;
        }
        let report = solve_fk(model, &s, &u, &cfg.fk)?;
        if !report.converged {
            return Err(IkError::ForwardDiverged);
        }
        s = report.s_hat;

        let simulated_ee = ee_state(model, &s);
        for c in 0..6 {
            if model.task_mask[c] {
                let d = simulated_ee[c] - row.commanded[c];
                sq[c] += d * d;
                if c < 3 {
                    pos_sq += d * d;
                }
            }
        }
        rows.push(ExecRow {
            step,
            commanded_ee: row.commanded,
            simulated_ee,
            target_bases: targets,
            simulated_bases: sampled,
            wheel_speeds,
        });
    }

    let n = rows.len().max(1) as f64;
    let mut rmse = [0.0f64; 6];
    for c in 0..6 {
        rmse[c] = (sq[c] / n).sqrt();
    }
    Ok(ExecutionReport { rows, rmse, pos_rmse: (pos_sq / n).sqrt() })
}
