//! Built-in CCMA scene construction.
//!
//! Link lengths and anchor placements are desk-scale design values chosen so
//! that every reference configuration closes exactly; the builders compute all
//! joint frames from one consistent world-space layout. Serialized copies of
//! these scenes ship in the `scenes/` directory.

use nalgebra::Vector3;
use std::f64::consts::{FRAC_PI_2, PI};

use crate::assembly::{Body, MobileBase, SceneError, SceneModel, Scheme};
use crate::constraints::{BlockData, ConstraintBlock};
use crate::rigidbody::RigidBodyState;

pub const CANONICAL_NAMES: [&str; 5] = [
    "ccma-4dof-reduced",
    "ccma-4dof-complete",
    "ccma-6dof-sym",
    "ccma-6dof-asym",
    "ccma-6dof-6agents",
];

pub fn build_canonical(name: &str) -> Result<SceneModel, SceneError> {
    match name {
        "ccma-4dof-reduced" => Ok(build_4dof_reduced()),
        "ccma-4dof-complete" => Ok(build_4dof_complete()),
        "ccma-6dof-sym" => Ok(build_6dof(false)),
        "ccma-6dof-asym" => Ok(build_6dof(true)),
        "ccma-6dof-6agents" => Ok(build_6dof_6agents()),
        other => Err(SceneError::UnknownCanonical(other.to_string())),
    }
}

// shared design values
const BASE_RADIUS: f64 = 0.45;
const EE_RADIUS: f64 = 0.12;
const BASE_ANCHOR_HEIGHT: f64 = 0.05;

/// Collects bodies and joints specified in world coordinates at the reference
/// pose (all bodies start with identity orientation, so local frames are
/// world frames shifted by the body origin).
struct SceneBuilder {
    name: String,
    bodies: Vec<Body>,
    joints: Vec<BlockData>,
    bases: Vec<MobileBase>,
}

impl SceneBuilder {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            bodies: Vec::new(),
            joints: Vec::new(),
            bases: Vec::new(),
        }
    }

    fn body(&mut self, name: String, origin: Vector3<f64>) -> usize {
        self.bodies.push(Body {
            name,
            initial: RigidBodyState::from_translation(origin),
        });
        self.bodies.len() - 1
    }

    fn local(&self, body: usize, world_point: &Vector3<f64>) -> Vector3<f64> {
        world_point - self.bodies[body].initial.t
    }

    fn revolute(&mut self, i: usize, j: usize, point: Vector3<f64>, axis: Vector3<f64>) {
        self.joints.push(BlockData::Revolute {
            body_i: i,
            body_j: j,
            p_i: self.local(i, &point),
            p_j: self.local(j, &point),
            axis_i: axis,
            axis_j: axis,
        });
    }

    fn spherical(&mut self, i: usize, j: usize, point: Vector3<f64>) {
        self.joints.push(BlockData::Spherical {
            body_i: i,
            body_j: j,
            p_i: self.local(i, &point),
            p_j: self.local(j, &point),
        });
    }

    fn fixed(&mut self, i: usize, j: usize, point: Vector3<f64>) {
        self.joints.push(BlockData::Fixed {
            body_i: i,
            body_j: j,
            p_i: self.local(i, &point),
            p_j: self.local(j, &point),
            a_i: Vector3::x(),
            a_j: Vector3::x(),
            b_i: Vector3::y(),
            b_j: Vector3::y(),
        });
    }

    fn universal(
        &mut self,
        i: usize,
        j: usize,
        point: Vector3<f64>,
        axis_i: Vector3<f64>,
        axis_j: Vector3<f64>,
    ) {
        self.joints.push(BlockData::Universal {
            body_i: i,
            body_j: j,
            p_i: self.local(i, &point),
            p_j: self.local(j, &point),
            axis_i,
            axis_j,
        });
    }

    fn base(&mut self, body: usize, scheme: Scheme) {
        let t = self.bodies[body].initial.t;
        self.bases.push(MobileBase {
            body,
            scheme,
            initial: [t.x, t.y, 0.0],
        });
    }

    fn finish(self, end_effector: usize, task_mask: [bool; 6]) -> SceneModel {
        let mut blocks = Vec::new();
        let mut row = 0usize;
        for data in self.joints {
            let block = ConstraintBlock { data, row_offset: row };
            row += block.rows();
            blocks.push(block);
        }
        for (k, base) in self.bases.iter().enumerate() {
            for data in [
                BlockData::PlanarBase { body: base.body },
                BlockData::MotorXy { body: base.body, slot_x: 3 * k, slot_y: 3 * k + 1 },
                BlockData::MotorZ { body: base.body, slot_theta: 3 * k + 2 },
            ] {
                let block = ConstraintBlock { data, row_offset: row };
                row += block.rows();
                blocks.push(block);
            }
        }
        SceneModel {
            name: self.name,
            bodies: self.bodies,
            blocks,
            mobile_bases: self.bases,
            end_effector,
            task_mask,
        }
    }
}

/// In-plane two-link closure between world points `a` and `p`: returns the
/// elbow position, the horizontal plane normal (revolute axis direction), and
/// the horizontal in-plane unit vector from `a` toward `p`.
fn two_link_ik(
    a: Vector3<f64>,
    p: Vector3<f64>,
    l1: f64,
    l2: f64,
) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>) {
    let dir = p - a;
    let d = (dir.x * dir.x + dir.y * dir.y).sqrt();
    assert!(d > 1e-9, "degenerate leg: anchors vertically aligned");
    let e1 = Vector3::new(dir.x / d, dir.y / d, 0.0);
    let dz = dir.z;
    let len = (d * d + dz * dz).sqrt();
    assert!(
        len < l1 + l2 && len > (l1 - l2).abs(),
        "leg closure out of reach: span {len}, links {l1}+{l2}"
    );
    let along = (len * len + l1 * l1 - l2 * l2) / (2.0 * len);
    let lift = (l1 * l1 - along * along).sqrt();
    // in-plane basis (e1, z): unit toward target and its +90 deg rotation
    let u = (d / len, dz / len);
    let n = (-dz / len, d / len);
    let knee = a + (along * u.0 + lift * n.0) * e1 + Vector3::new(0.0, 0.0, along * u.1 + lift * n.1);
    let normal = Vector3::new(e1.y, -e1.x, 0.0);
    (knee, normal, e1)
}

fn ring_position(radius: f64, azimuth: f64, z: f64) -> Vector3<f64> {
    Vector3::new(radius * azimuth.cos(), radius * azimuth.sin(), z)
}

const MASK_4DOF: [bool; 6] = [true, true, true, true, false, false];
const MASK_6DOF: [bool; 6] = [true; 6];

/// Three identical two-link legs on vertical base revolutes; the extra
/// vertical revolute sits on each base's rotation axis so base heading cannot
/// move the chain.
fn build_4dof_reduced() -> SceneModel {
    // steep lower links put the knee plane (where every upper link would go
    // horizontal and the platform gains a vertical mobility) well above the
    // tracked height band; the wide attachment ring keeps base motion from
    // gearing into large platform rotations
    build_4dof_reduced_params(BASE_RADIUS, 0.32, 50f64.to_radians(), 0.68, 0.40)
}

#[doc(hidden)]
pub fn build_4dof_reduced_params(
    base_radius: f64,
    platform_radius: f64,
    skew: f64,
    l1: f64,
    l2: f64,
) -> SceneModel {
    let mut b = SceneBuilder::new("ccma-4dof-reduced");
    let ee_height = 0.45;
    let ee = b.body("ee".to_string(), Vector3::new(0.0, 0.0, ee_height));
    for k in 0..3 {
        let az = FRAC_PI_2 + 2.0 * PI * k as f64 / 3.0;
        let base_pos = ring_position(base_radius, az, 0.0);
        let anchor = base_pos + Vector3::new(0.0, 0.0, BASE_ANCHOR_HEIGHT);
        let platform = ring_position(platform_radius, az + skew, ee_height);
        let (knee, normal, e1) = two_link_ik(anchor, platform, l1, l2);

        let base = b.body(format!("base{k}"), base_pos);
        let lower = b.body(format!("leg{k}_lower"), (anchor + knee) / 2.0);
        let upper = b.body(format!("leg{k}_upper"), (knee + platform) / 2.0);

        b.revolute(base, lower, anchor, Vector3::z());
        b.revolute(lower, upper, knee, normal);
        b.universal(upper, ee, platform, normal, e1);
        b.base(base, Scheme::Reduced);
    }
    b.finish(ee, MASK_4DOF)
}

/// Same base circle and end-effector as the reduced scene, but each leg is
/// bolted to its base: a welded post carries a shoulder revolute and a single
/// link ending in a spherical joint.
fn build_4dof_complete() -> SceneModel {
    // wider base circle and low shoulder chosen by a joint scan over random
    // base-command feasibility and the +-100 mm / +-0.4 rad tracking workspace
    build_4dof_complete_params(0.55, 0.22, 20f64.to_radians(), 0.10)
}

#[doc(hidden)]
pub fn build_4dof_complete_params(
    base_radius: f64,
    platform_radius: f64,
    skew: f64,
    shoulder_height: f64,
) -> SceneModel {
    let mut b = SceneBuilder::new("ccma-4dof-complete");
    let ee_height = 0.45;
    let ee = b.body("ee".to_string(), Vector3::new(0.0, 0.0, ee_height));
    for k in 0..3 {
        let az = FRAC_PI_2 + 2.0 * PI * k as f64 / 3.0;
        let base_pos = ring_position(base_radius, az, 0.0);
        let shoulder = base_pos + Vector3::new(0.0, 0.0, shoulder_height);
        // skewed anchors keep the arms non-radial: the radially symmetric
        // layout passes through a kinematic singularity under lateral motion
        let platform = ring_position(platform_radius, az + skew, ee_height);
        let dir = platform - shoulder;
        let d = (dir.x * dir.x + dir.y * dir.y).sqrt();
        let e1 = Vector3::new(dir.x / d, dir.y / d, 0.0);
        let normal = Vector3::new(e1.y, -e1.x, 0.0);

        let base = b.body(format!("base{k}"), base_pos);
        let post = b.body(format!("post{k}"), (base_pos + shoulder) / 2.0);
        let arm = b.body(format!("arm{k}"), (shoulder + platform) / 2.0);

        b.fixed(base, post, base_pos + Vector3::new(0.0, 0.0, BASE_ANCHOR_HEIGHT));
        b.revolute(post, arm, shoulder, normal);
        b.spherical(arm, ee, platform);
        b.base(base, Scheme::Complete);
    }
    b.finish(ee, MASK_4DOF)
}

/// Three bolted two-link legs with parallel shoulder/elbow axes and a
/// universal wrist; the end-effector anchors are skewed relative to the base
/// ring so the legs are not radial. The asymmetric variant changes leg 3's
/// link lengths, shoulder height and skew.
fn build_6dof(asymmetric: bool) -> SceneModel {
    let name = if asymmetric { "ccma-6dof-asym" } else { "ccma-6dof-sym" };
    let mut b = SceneBuilder::new(name);
    let ee_height = 0.45;
    let ee = b.body("ee".to_string(), Vector3::new(0.0, 0.0, ee_height));
    for k in 0..3 {
        let (l1, l2, shoulder_height, skew) = if asymmetric && k == 2 {
            (0.35, 0.25, 0.25, 40f64.to_radians())
        } else {
            (0.30, 0.30, 0.20, 25f64.to_radians())
        };
        let az = FRAC_PI_2 + 2.0 * PI * k as f64 / 3.0;
        let base_pos = ring_position(BASE_RADIUS, az, 0.0);
        let shoulder = base_pos + Vector3::new(0.0, 0.0, shoulder_height);
        let platform = ring_position(EE_RADIUS, az + skew, ee_height);
        let (elbow, normal, _e1) = two_link_ik(shoulder, platform, l1, l2);
        // Wrist axes: the forearm-side axis runs along the forearm link so the
        // orthogonality row feels the arm-joint angles; its platform-side mate
        // mixes the in-plane perpendicular with the elbow axis so platform
        // tilt and height cannot hide in the arm.
        let fore_dir = (platform - elbow).normalize();
        let in_plane_perp = normal.cross(&fore_dir);
        let wrist_mate = (in_plane_perp + normal).normalize();

        let base = b.body(format!("base{k}"), base_pos);
        let post = b.body(format!("post{k}"), (base_pos + shoulder) / 2.0);
        let upper = b.body(format!("leg{k}_upper"), (shoulder + elbow) / 2.0);
        let fore = b.body(format!("leg{k}_fore"), (elbow + platform) / 2.0);

        b.fixed(base, post, base_pos + Vector3::new(0.0, 0.0, BASE_ANCHOR_HEIGHT));
        b.revolute(post, upper, shoulder, normal);
        b.revolute(upper, fore, elbow, normal);
        b.universal(fore, ee, platform, fore_dir, wrist_mate);
        b.base(base, Scheme::Complete);
    }
    b.finish(ee, MASK_6DOF)
}

/// Six bolted single-link legs in a splayed hexapod arrangement: spherical at
/// the post, universal at the platform (the universal's orthogonality row
/// pins the link's roll about its own axis).
fn build_6dof_6agents() -> SceneModel {
    let mut b = SceneBuilder::new("ccma-6dof-6agents");
    let ee_height = 0.42;
    let shoulder_height = 0.15;
    let base_az = [10.0, 110.0, 130.0, 230.0, 250.0, 350.0];
    let ee_az = [70.0, 50.0, 190.0, 170.0, 310.0, 290.0];
    let ee = b.body("ee".to_string(), Vector3::new(0.0, 0.0, ee_height));
    for k in 0..6 {
        let base_pos = ring_position(BASE_RADIUS, (base_az[k] as f64).to_radians(), 0.0);
        let shoulder = base_pos + Vector3::new(0.0, 0.0, shoulder_height);
        let platform = ring_position(EE_RADIUS, (ee_az[k] as f64).to_radians(), ee_height);
        let link_dir = (platform - shoulder).normalize();
        let axis_link = link_dir.cross(&Vector3::z()).normalize();
        let axis_ee = link_dir.cross(&axis_link);

        let base = b.body(format!("base{k}"), base_pos);
        let post = b.body(format!("post{k}"), (base_pos + shoulder) / 2.0);
        let link = b.body(format!("link{k}"), (shoulder + platform) / 2.0);

        b.fixed(base, post, base_pos + Vector3::new(0.0, 0.0, BASE_ANCHOR_HEIGHT));
        b.spherical(post, link, shoulder);
        b.universal(link, ee, platform, axis_link, axis_ee);
        b.base(base, Scheme::Complete);
    }
    b.finish(ee, MASK_6DOF)
}
