//! Fixed-timestep rigid-body simulation of boxes connected by motorized
//! hinge joints, resting on an infinite ground plane at `y = 0`.
//!
//! One call to [`World::step`] performs, in order:
//!
//! 1. gravity applied to linear velocities,
//! 2. ground contact and hinge constraint setup (with warm starting),
//! 3. `solver_iterations` sequential-impulse passes with Baumgarte bias,
//! 4. semi-implicit Euler integration of positions and orientations,
//!    followed by a position-level projection of hinge anchors,
//! 5. quaternion renormalization.
//!
//! There is no box-box collision: limbs of the same animat may pass through
//! each other. The gyroscopic term is omitted, so a free body keeps its
//! angular velocity exactly.

mod body;
mod contact;
mod joint;
mod solver;
mod world;

pub use body::{box_inertia, Body};
pub(crate) use body::mass_serde;
pub use contact::{box_vertices, detect_ground_contacts, Contact};
pub use joint::{joint_angle, HingeJoint};
pub use world::{world_digest, GroundPlane, World};

use nalgebra::{UnitQuaternion, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Quat = UnitQuaternion<f64>;

pub const DEFAULT_DT: f64 = 1.0 / 240.0;
pub const DEFAULT_SOLVER_ITERATIONS: usize = 10;
pub const DEFAULT_GRAVITY: [f64; 3] = [0.0, -9.81, 0.0];

/// Fraction of positional error fed back as velocity bias per step.
pub const BAUMGARTE: f64 = 0.2;
/// Penetration tolerated without positional correction, meters.
pub const PENETRATION_SLOP: f64 = 0.005;
/// Hinge motors never command more than this relative angular speed, rad/s.
pub const MAX_MOTOR_SPEED: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("simulation diverged: body {body} ({name}) became non-finite at step {step}")]
    Diverged { body: usize, name: String, step: u64 },
}

pub type Result<T, E = PhysicsError> = std::result::Result<T, E>;
