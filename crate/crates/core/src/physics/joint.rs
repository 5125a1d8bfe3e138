use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::{PhysicsError, Quat, Result, Vec3, World};

/// One-degree-of-freedom hinge between two bodies, with angle limits and a
/// positional servo motor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HingeJoint {
    pub id: usize,
    pub parent: usize,
    pub child: usize,
    pub anchor_parent: Vec3,
    pub anchor_child: Vec3,
    pub axis_parent: Vec3,
    pub axis_child: Vec3,
    pub limit_lo: f64,
    pub limit_hi: f64,
    pub motor_max_torque: f64,
    pub motor_target_angle: f64,
    /// `parent⁻¹ · child` at creation; the zero of [`joint_angle`].
    pub(crate) reference: Quat,
    #[serde(default)]
    pub(crate) warm: JointImpulses,
}

/// Accumulated impulses from the previous step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct JointImpulses {
    pub motor: f64,
    pub lower: f64,
    pub upper: f64,
}

impl HingeJoint {
    /// A hinge whose axis is the same direction in both local frames.
    /// Bodies must already be posed so the anchors coincide.
    pub fn new(
        parent: usize,
        child: usize,
        anchor_parent: Vec3,
        anchor_child: Vec3,
        axis: Vec3,
    ) -> Self {
        Self {
            id: 0,
            parent,
            child,
            anchor_parent,
            anchor_child,
            axis_parent: axis,
            axis_child: axis,
            limit_lo: -PI + 1e-3,
            limit_hi: PI - 1e-3,
            motor_max_torque: 0.0,
            motor_target_angle: 0.0,
            reference: Quat::identity(),
            warm: JointImpulses::default(),
        }
    }

    pub fn with_child_axis(mut self, axis_child: Vec3) -> Self {
        self.axis_child = axis_child;
        self
    }

    pub fn with_limits(mut self, lo: f64, hi: f64) -> Self {
        self.limit_lo = lo;
        self.limit_hi = hi;
        self
    }

    pub fn with_motor(mut self, max_torque: f64) -> Self {
        self.motor_max_torque = max_torque;
        self
    }

    pub(crate) fn validate(&self, body_count: usize) -> Result<()> {
        let bad = |msg: String| Err(PhysicsError::InvalidArgument(msg));
        if self.parent == self.child {
            return bad(format!("joint parent and child are both body {}", self.parent));
        }
        if self.parent >= body_count || self.child >= body_count {
            return bad(format!(
                "joint references body {}/{} but world has {body_count} bodies",
                self.parent, self.child
            ));
        }
        for (label, a) in [("parent", &self.axis_parent), ("child", &self.axis_child)] {
            if (a.norm() - 1.0).abs() > 1e-9 {
                return bad(format!("{label} axis {a:?} is not unit length"));
            }
        }
        if !(self.limit_lo <= 0.0 && 0.0 <= self.limit_hi) {
            return bad(format!("limits [{}, {}] must bracket 0", self.limit_lo, self.limit_hi));
        }
        if !(self.limit_hi - self.limit_lo < 2.0 * PI) {
            return bad("limit range must be narrower than 2π".into());
        }
        if !(self.motor_max_torque >= 0.0) || !self.motor_max_torque.is_finite() {
            return bad(format!("motor torque {} must be finite and ≥ 0", self.motor_max_torque));
        }
        Ok(())
    }
}

/// Twist angle of `q` about the unit `axis`, wrapped to (−π, π].
pub(crate) fn twist_angle(q: &Quat, axis: &Vec3) -> f64 {
    let v = q.imag();
    let angle = 2.0 * v.dot(axis).atan2(q.w);
    wrap_angle(angle)
}

pub(crate) fn wrap_angle(mut a: f64) -> f64 {
    while a > PI {
        a -= 2.0 * PI;
    }
    while a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Signed rotation of the child relative to the parent about the hinge axis,
/// measured from the relative orientation captured when the joint was added.
pub fn joint_angle(world: &World, joint: usize) -> f64 {
    let j = &world.joints[joint];
    let qp = world.bodies[j.parent].orientation;
    let qc = world.bodies[j.child].orientation;
    let delta = qp.inverse() * qc * j.reference.inverse();
    twist_angle(&delta, &j.axis_parent)
}
