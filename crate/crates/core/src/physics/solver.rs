//! Sequential-impulse velocity solver and integrator.

use nalgebra::{Matrix2, Matrix3, Quaternion, Vector2};

use super::contact::detect_ground_contacts;
use super::joint::{joint_angle, JointImpulses};
use super::{
    PhysicsError, Quat, Result, Vec3, World, BAUMGARTE, MAX_MOTOR_SPEED, PENETRATION_SLOP,
};

/// Anchor separation below which position projection stops early, meters.
const ANCHOR_TOLERANCE: f64 = 1e-5;

/// Per-step mass properties; velocities live in separate vectors so rows can
/// update two bodies without aliasing.
struct MassProps {
    inv_mass: f64,
    inv_inertia: Matrix3<f64>,
}

struct Velocities {
    linear: Vec<Vec3>,
    angular: Vec<Vec3>,
}

impl Velocities {
    fn apply(&mut self, mass: &[MassProps], body: usize, r: &Vec3, impulse: &Vec3) {
        let m = &mass[body];
        self.linear[body] += impulse * m.inv_mass;
        self.angular[body] += m.inv_inertia * r.cross(impulse);
    }

    fn apply_angular(&mut self, mass: &[MassProps], body: usize, angular_impulse: &Vec3) {
        self.angular[body] += mass[body].inv_inertia * angular_impulse;
    }

    fn point_velocity(&self, body: usize, r: &Vec3) -> Vec3 {
        self.linear[body] + self.angular[body].cross(r)
    }
}

struct ContactRow {
    body: usize,
    vertex: usize,
    r: Vec3,
    normal_mass: f64,
    tangent_mass: [f64; 2],
    bias: f64,
    /// normal, tangent x, tangent z
    impulse: [f64; 3],
}

const TANGENTS: [Vec3; 2] = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)];
const NORMAL: Vec3 = Vec3::new(0.0, 1.0, 0.0);

/// A one-sided angular limit row: `sign · θ̇ ≥ min_rate`.
struct LimitRow {
    sign: f64,
    min_rate: f64,
}

struct JointRow {
    parent: usize,
    child: usize,
    r_parent: Vec3,
    r_child: Vec3,
    point_mass: Matrix3<f64>,
    point_bias: Vec3,
    axis: Vec3,
    basis: [Vec3; 2],
    angular_mass: Matrix2<f64>,
    angular_bias: Vector2<f64>,
    axial_mass: f64,
    motor_rate: f64,
    motor_max_impulse: f64,
    lower: LimitRow,
    upper: LimitRow,
    impulses: JointImpulses,
}

fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Two unit vectors completing `axis` to an orthonormal frame.
fn perpendicular_basis(axis: &Vec3) -> [Vec3; 2] {
    let b1 = if axis.x.abs() > 0.57735 {
        Vec3::new(axis.y, -axis.x, 0.0)
    } else {
        Vec3::new(0.0, axis.z, -axis.y)
    }
    .normalize();
    [b1, axis.cross(&b1)]
}

pub(super) fn step(world: &mut World) -> Result<()> {
    let dt = world.dt();
    let inv_dt = 1.0 / dt;
    let gravity = world.gravity;

    for b in world.bodies.iter_mut().filter(|b| !b.is_static()) {
        b.linear_velocity += gravity * dt;
    }

    let mass: Vec<MassProps> = world
        .bodies
        .iter()
        .map(|b| MassProps { inv_mass: b.inv_mass(), inv_inertia: b.inv_inertia_world() })
        .collect();
    let mut vel = Velocities {
        linear: world.bodies.iter().map(|b| b.linear_velocity).collect(),
        angular: world.bodies.iter().map(|b| b.angular_velocity).collect(),
    };

    let mut contacts = build_contacts(world, &mass, &vel, inv_dt);
    let mut joints = build_joints(world, &mass, dt, inv_dt);

    // warm start
    let mu = world.ground.friction;
    for c in &contacts {
        let p = NORMAL * c.impulse[0] + TANGENTS[0] * c.impulse[1] + TANGENTS[1] * c.impulse[2];
        vel.apply(&mass, c.body, &c.r, &p);
    }
    // Hinge point and alignment rows start cold: replaying their
    // Baumgarte-laden impulses makes standing animats chatter.
    for j in &joints {
        let w = &j.impulses;
        let angular = j.axis * (w.motor + w.lower - w.upper);
        apply_pair(&mut vel, &mass, j, &Vec3::zeros(), &angular);
    }

    for _ in 0..world.solver_iterations {
        for j in joints.iter_mut() {
            solve_joint(j, &mut vel, &mass);
        }
        for c in contacts.iter_mut() {
            solve_contact(c, &mut vel, &mass, mu);
        }
    }

    for cache in world.contact_cache.iter_mut() {
        *cache = [[0.0; 3]; 8];
    }
    for c in &contacts {
        world.contact_cache[c.body][c.vertex] = c.impulse;
    }
    for (joint, row) in world.joints.iter_mut().zip(&joints) {
        joint.warm = row.impulses;
    }

    for (i, b) in world.bodies.iter_mut().enumerate() {
        if b.is_static() {
            continue;
        }
        b.linear_velocity = vel.linear[i];
        b.angular_velocity = vel.angular[i];
        b.position += b.linear_velocity * dt;
        b.orientation = rotate(&b.orientation, &(b.angular_velocity * dt));
    }

    project_anchors(world, &mass);

    let step = world.step_count + 1;
    for (i, b) in world.bodies.iter().enumerate() {
        if b.first_non_finite() {
            return Err(PhysicsError::Diverged { body: i, name: b.name.clone(), step });
        }
    }
    world.step_count = step;
    Ok(())
}

/// First-order update of `q` by the rotation vector `theta`, renormalized.
fn rotate(q: &Quat, theta: &Vec3) -> Quat {
    let q = q.into_inner();
    Quat::new_normalize(q + Quaternion::from_imag(*theta) * q * 0.5)
}

/// Position-level Gauss-Seidel on the hinge anchors.
///
/// Velocity constraints cannot follow the arc an anchor traces on a spinning
/// body, so the integrated anchors separate by roughly `ω²·r·dt²` per step.
/// This pass removes that separation; velocities are left untouched.
fn project_anchors(world: &mut World, mass: &[MassProps]) {
    for _ in 0..world.solver_iterations {
        let mut worst = 0.0_f64;
        for j in &world.joints {
            let (pi, ci) = (j.parent, j.child);
            let (mp, mc) = (&mass[pi], &mass[ci]);
            let (bp, bc) = (&world.bodies[pi], &world.bodies[ci]);
            let r_parent = bp.orientation * j.anchor_parent;
            let r_child = bc.orientation * j.anchor_child;
            let error = (bc.position + r_child) - (bp.position + r_parent);
            worst = worst.max(error.norm());

            let sp = skew(&r_parent);
            let sc = skew(&r_child);
            let k = Matrix3::identity() * (mp.inv_mass + mc.inv_mass)
                - sp * mp.inv_inertia * sp
                - sc * mc.inv_inertia * sc;
            let Some(k_inv) = k.try_inverse() else { continue };
            let lambda = -(k_inv * error);

            let child = &mut world.bodies[ci];
            if !child.is_static() {
                child.position += lambda * mc.inv_mass;
                child.orientation = rotate(&child.orientation, &(mc.inv_inertia * r_child.cross(&lambda)));
            }
            let parent = &mut world.bodies[pi];
            if !parent.is_static() {
                parent.position -= lambda * mp.inv_mass;
                parent.orientation =
                    rotate(&parent.orientation, &-(mp.inv_inertia * r_parent.cross(&lambda)));
            }
        }
        if worst < ANCHOR_TOLERANCE {
            break;
        }
    }
}

fn build_contacts(
    world: &World,
    mass: &[MassProps],
    vel: &Velocities,
    inv_dt: f64,
) -> Vec<ContactRow> {
    let restitution = world.ground.restitution;
    detect_ground_contacts(world)
        .into_iter()
        .map(|c| {
            let body = &world.bodies[c.body];
            let m = &mass[c.body];
            let r = c.point - body.position;
            let eff = |dir: &Vec3| {
                let rd = r.cross(dir);
                1.0 / (m.inv_mass + rd.dot(&(m.inv_inertia * rd)))
            };
            let mut bias = BAUMGARTE * inv_dt * (c.penetration - PENETRATION_SLOP).max(0.0);
            if restitution > 0.0 {
                let vn = vel.point_velocity(c.body, &r).dot(&NORMAL);
                if vn < -1.0 {
                    bias = bias.max(-restitution * vn);
                }
            }
            ContactRow {
                body: c.body,
                vertex: c.vertex as usize,
                r,
                normal_mass: eff(&NORMAL),
                tangent_mass: [eff(&TANGENTS[0]), eff(&TANGENTS[1])],
                bias,
                impulse: world.contact_cache[c.body][c.vertex as usize],
            }
        })
        .collect()
}

fn build_joints(world: &World, mass: &[MassProps], dt: f64, inv_dt: f64) -> Vec<JointRow> {
    world
        .joints
        .iter()
        .enumerate()
        .map(|(index, j)| {
            let (bp, bc) = (&world.bodies[j.parent], &world.bodies[j.child]);
            let (mp, mc) = (&mass[j.parent], &mass[j.child]);
            let r_parent = bp.orientation * j.anchor_parent;
            let r_child = bc.orientation * j.anchor_child;
            let drift = (bc.position + r_child) - (bp.position + r_parent);

            let sp = skew(&r_parent);
            let sc = skew(&r_child);
            let k = Matrix3::identity() * (mp.inv_mass + mc.inv_mass)
                - sp * mp.inv_inertia * sp
                - sc * mc.inv_inertia * sc;
            let point_mass = k.try_inverse().unwrap_or_else(Matrix3::zeros);

            let axis = bp.orientation * j.axis_parent;
            let child_axis = bc.orientation * j.axis_child;
            let basis = perpendicular_basis(&axis);
            let misalignment = axis.cross(&child_axis);
            let inv_i = mp.inv_inertia + mc.inv_inertia;
            let ang_k = Matrix2::new(
                basis[0].dot(&(inv_i * basis[0])),
                basis[0].dot(&(inv_i * basis[1])),
                basis[1].dot(&(inv_i * basis[0])),
                basis[1].dot(&(inv_i * basis[1])),
            );
            let angular_mass = ang_k.try_inverse().unwrap_or_else(Matrix2::zeros);
            let axial_k = axis.dot(&(inv_i * axis));
            let axial_mass = if axial_k > 0.0 { 1.0 / axial_k } else { 0.0 };

            let angle = joint_angle(world, index);
            let motor_rate = ((j.motor_target_angle - angle) * inv_dt)
                .clamp(-MAX_MOTOR_SPEED, MAX_MOTOR_SPEED);
            let limit_rate = |gap: f64| {
                if gap > 0.0 {
                    -gap * inv_dt
                } else {
                    -BAUMGARTE * inv_dt * gap
                }
            };

            JointRow {
                parent: j.parent,
                child: j.child,
                r_parent,
                r_child,
                point_mass,
                point_bias: drift * (BAUMGARTE * inv_dt),
                axis,
                basis,
                angular_mass,
                angular_bias: Vector2::new(
                    basis[0].dot(&misalignment),
                    basis[1].dot(&misalignment),
                ) * (BAUMGARTE * inv_dt),
                axial_mass,
                motor_rate,
                motor_max_impulse: j.motor_max_torque * dt,
                lower: LimitRow { sign: 1.0, min_rate: limit_rate(angle - j.limit_lo) },
                upper: LimitRow { sign: -1.0, min_rate: limit_rate(j.limit_hi - angle) },
                impulses: j.warm,
            }
        })
        .collect()
}

/// Applies `linear` at the anchors and `angular` as a pure torque impulse,
/// positive on the child and negative on the parent.
fn apply_pair(vel: &mut Velocities, mass: &[MassProps], j: &JointRow, linear: &Vec3, angular: &Vec3) {
    vel.apply(mass, j.child, &j.r_child, linear);
    vel.apply(mass, j.parent, &j.r_parent, &-linear);
    vel.apply_angular(mass, j.child, angular);
    vel.apply_angular(mass, j.parent, &-angular);
}

fn solve_joint(j: &mut JointRow, vel: &mut Velocities, mass: &[MassProps]) {
    let zero = Vec3::zeros();

    // motor
    if j.motor_max_impulse > 0.0 {
        let rate = j.axis.dot(&(vel.angular[j.child] - vel.angular[j.parent]));
        let old = j.impulses.motor;
        let new = (old + j.axial_mass * (j.motor_rate - rate))
            .clamp(-j.motor_max_impulse, j.motor_max_impulse);
        j.impulses.motor = new;
        apply_pair(vel, mass, j, &zero, &(j.axis * (new - old)));
    }

    // limits
    for (limit, acc) in [(&j.lower, &mut j.impulses.lower), (&j.upper, &mut j.impulses.upper)] {
        let rate = limit.sign * j.axis.dot(&(vel.angular[j.child] - vel.angular[j.parent]));
        let old = *acc;
        let new = (old + j.axial_mass * (limit.min_rate - rate)).max(0.0);
        *acc = new;
        let torque = j.axis * (limit.sign * (new - old));
        vel.apply_angular(mass, j.child, &torque);
        vel.apply_angular(mass, j.parent, &-torque);
    }

    // keep the child axis aligned with the parent axis
    let rel = vel.angular[j.child] - vel.angular[j.parent];
    let rate = Vector2::new(j.basis[0].dot(&rel), j.basis[1].dot(&rel));
    let lambda = j.angular_mass * (-rate - j.angular_bias);
    let torque = j.basis[0] * lambda.x + j.basis[1] * lambda.y;
    apply_pair(vel, mass, j, &zero, &torque);

    // coincident anchors
    let rate = vel.point_velocity(j.child, &j.r_child) - vel.point_velocity(j.parent, &j.r_parent);
    let lambda = j.point_mass * (-rate - j.point_bias);
    apply_pair(vel, mass, j, &lambda, &zero);
}

fn solve_contact(c: &mut ContactRow, vel: &mut Velocities, mass: &[MassProps], mu: f64) {
    // friction first so the normal row has the last word
    let limit = mu * c.impulse[0];
    for (k, t) in TANGENTS.iter().enumerate() {
        let vt = vel.point_velocity(c.body, &c.r).dot(t);
        let old = c.impulse[k + 1];
        let new = (old - c.tangent_mass[k] * vt).clamp(-limit, limit);
        c.impulse[k + 1] = new;
        vel.apply(mass, c.body, &c.r, &(t * (new - old)));
    }

    let vn = vel.point_velocity(c.body, &c.r).dot(&NORMAL);
    let old = c.impulse[0];
    let new = (old + c.normal_mass * (c.bias - vn)).max(0.0);
    c.impulse[0] = new;
    vel.apply(mass, c.body, &c.r, &(NORMAL * (new - old)));
}
