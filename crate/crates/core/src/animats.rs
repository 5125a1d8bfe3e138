//! The three fixed body plans and the sinusoidal joint controller.
//!
//! # Morphology reference
//!
//! All animats face `+x`; `+z` is their left. Hinge motors have a torque
//! limit of 6 N·m.
//!
//! | kind | bodies | joints | genome length |
//! |------|--------|--------|---------------|
//! | quadruped | 9 | 8 | 25 |
//! | octopod | 17 | 16 | 49 |
//! | sims_crawler | 7 | 6 | 19 |
//!
//! **Quadruped.** Body 0 is a 0.6×0.15×0.4 m torso of 2 kg. Legs follow in
//! the order front-left, front-right, rear-left, rear-right; each leg is an
//! upper then a lower 0.08×0.3×0.08 m segment of 0.25 kg hanging below a
//! torso bottom corner. Joint `2k` is leg `k`'s hip (±0.9 rad) and joint
//! `2k+1` its knee (−1.4..0 rad); all hinge axes point along `z`.
//!
//! **Octopod.** A 1.0×0.15×0.4 m torso of 3 kg with four leg pairs evenly
//! spaced from the front edge to the rear edge. Pair `p` contributes its
//! left then right leg; segments, limits and axes as for the quadruped.
//!
//! **SimsCrawler.** A 0.3 m cubic torso of 1.5 kg with two chains of three
//! 0.25×0.08×0.08 m segments (0.25 kg) leaving the `+x` and `−x` faces at
//! mid-height, front chain first. Along each chain the hinge axes alternate
//! `y`, `z`, `y`; all limits are ±1.2 rad.
//!
//! # Genome layout
//!
//! For `J` joints the genome has `3J + 1` genes: `[amplitude, phase,
//! offset]` for each joint in joint order, then one shared frequency in Hz.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::physics::{Body, HingeJoint, Vec3, World};

pub const SPAWN_CLEARANCE: f64 = 0.01;
pub const MOTOR_MAX_TORQUE: f64 = 6.0;
pub const FREQUENCY_RANGE: (f64, f64) = (0.5, 2.5);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnimatError {
    #[error("invalid argument: genome has {got} genes, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown animat kind {0:?}")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnimatKind {
    Quadruped,
    Octopod,
    SimsCrawler,
}

impl AnimatKind {
    pub const ALL: [AnimatKind; 3] = [Self::Quadruped, Self::Octopod, Self::SimsCrawler];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Quadruped => "quadruped",
            Self::Octopod => "octopod",
            Self::SimsCrawler => "sims_crawler",
        }
    }

    pub fn morphology(self) -> MorphologySpec {
        match self {
            Self::Quadruped => legged(self, Vec3::new(0.3, 0.075, 0.2), 2.0, 2),
            Self::Octopod => legged(self, Vec3::new(0.5, 0.075, 0.2), 3.0, 4),
            Self::SimsCrawler => sims_crawler(),
        }
    }

    pub fn genome_spec(self) -> GenomeSpec {
        GenomeSpec::for_morphology(&self.morphology())
    }
}

impl fmt::Display for AnimatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnimatKind {
    type Err = AnimatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "quadruped" => Ok(Self::Quadruped),
            "octopod" => Ok(Self::Octopod),
            "sims_crawler" | "simscrawler" | "sims" => Ok(Self::SimsCrawler),
            _ => Err(AnimatError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyDef {
    pub name: String,
    pub half_extents: Vec3,
    pub mass: f64,
    /// Center relative to the torso center, before the spawn lift.
    pub position: Vec3,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDef {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    pub anchor_parent: Vec3,
    pub anchor_child: Vec3,
    pub axis: Vec3,
    pub limit_lo: f64,
    pub limit_hi: f64,
    pub motor_max_torque: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorphologySpec {
    pub kind: AnimatKind,
    pub bodies: Vec<BodyDef>,
    pub joints: Vec<JointDef>,
    pub torso_id: usize,
}

const TORSO_COLOR: [f64; 3] = [0.85, 0.45, 0.2];
const LIMB_COLOR: [f64; 3] = [0.25, 0.5, 0.8];

const SEGMENT_HALF: Vec3 = Vec3::new(0.04, 0.15, 0.04);
const SEGMENT_MASS: f64 = 0.25;
const HIP_LIMIT: f64 = 0.9;
const KNEE_LIMITS: (f64, f64) = (-1.4, 0.0);

/// Torso plus `pairs` left/right leg pairs spread over the torso length.
fn legged(kind: AnimatKind, torso: Vec3, torso_mass: f64, pairs: usize) -> MorphologySpec {
    let mut bodies = vec![BodyDef {
        name: "torso".into(),
        half_extents: torso,
        mass: torso_mass,
        position: Vec3::zeros(),
        color: TORSO_COLOR,
    }];
    let mut joints = Vec::new();
    let leg_len = 2.0 * SEGMENT_HALF.y;

    for pair in 0..pairs {
        // front edge to rear edge
        let x = torso.x - 2.0 * torso.x * pair as f64 / (pairs - 1) as f64;
        for (side, z) in [("left", torso.z), ("right", -torso.z)] {
            let prefix = if pairs == 2 {
                format!("{}_{side}", if pair == 0 { "front" } else { "rear" })
            } else {
                format!("leg{pair}_{side}")
            };
            let hip = Vec3::new(x, -torso.y, z);
            let upper = bodies.len();
            bodies.push(BodyDef {
                name: format!("{prefix}_upper"),
                half_extents: SEGMENT_HALF,
                mass: SEGMENT_MASS,
                position: hip - Vec3::new(0.0, SEGMENT_HALF.y, 0.0),
                color: LIMB_COLOR,
            });
            let lower = bodies.len();
            bodies.push(BodyDef {
                name: format!("{prefix}_lower"),
                half_extents: SEGMENT_HALF,
                mass: SEGMENT_MASS,
                position: hip - Vec3::new(0.0, leg_len + SEGMENT_HALF.y, 0.0),
                color: LIMB_COLOR,
            });
            joints.push(JointDef {
                name: format!("{prefix}_hip"),
                parent: 0,
                child: upper,
                anchor_parent: hip,
                anchor_child: Vec3::new(0.0, SEGMENT_HALF.y, 0.0),
                axis: Vec3::z(),
                limit_lo: -HIP_LIMIT,
                limit_hi: HIP_LIMIT,
                motor_max_torque: MOTOR_MAX_TORQUE,
            });
            joints.push(JointDef {
                name: format!("{prefix}_knee"),
                parent: upper,
                child: lower,
                anchor_parent: Vec3::new(0.0, -SEGMENT_HALF.y, 0.0),
                anchor_child: Vec3::new(0.0, SEGMENT_HALF.y, 0.0),
                axis: Vec3::z(),
                limit_lo: KNEE_LIMITS.0,
                limit_hi: KNEE_LIMITS.1,
                motor_max_torque: MOTOR_MAX_TORQUE,
            });
        }
    }
    MorphologySpec { kind, bodies, joints, torso_id: 0 }
}

fn sims_crawler() -> MorphologySpec {
    let torso = 0.15;
    let seg = Vec3::new(0.125, 0.04, 0.04);
    let mut bodies = vec![BodyDef {
        name: "torso".into(),
        half_extents: Vec3::new(torso, torso, torso),
        mass: 1.5,
        position: Vec3::zeros(),
        color: TORSO_COLOR,
    }];
    let mut joints = Vec::new();
    for (label, dir) in [("front", 1.0), ("rear", -1.0)] {
        let mut parent = 0;
        for k in 0..3 {
            let child = bodies.len();
            let center = dir * (torso + seg.x + 2.0 * seg.x * k as f64);
            bodies.push(BodyDef {
                name: format!("{label}_segment{k}"),
                half_extents: seg,
                mass: SEGMENT_MASS,
                position: Vec3::new(center, 0.0, 0.0),
                color: LIMB_COLOR,
            });
            let anchor_parent = if k == 0 {
                Vec3::new(dir * torso, 0.0, 0.0)
            } else {
                Vec3::new(dir * seg.x, 0.0, 0.0)
            };
            joints.push(JointDef {
                name: format!("{label}_joint{k}"),
                parent,
                child,
                anchor_parent,
                anchor_child: Vec3::new(-dir * seg.x, 0.0, 0.0),
                axis: if k % 2 == 0 { Vec3::y() } else { Vec3::z() },
                limit_lo: -1.2,
                limit_hi: 1.2,
                motor_max_torque: MOTOR_MAX_TORQUE,
            });
            parent = child;
        }
    }
    MorphologySpec { kind: AnimatKind::SimsCrawler, bodies, joints, torso_id: 0 }
}

/// Builds the animat at rest with its lowest vertex [`SPAWN_CLEARANCE`]
/// above the ground.
pub fn build_animat(kind: AnimatKind) -> (World, MorphologySpec) {
    let spec = kind.morphology();
    let world = world_from_morphology(&spec);
    (world, spec)
}

pub fn world_from_morphology(spec: &MorphologySpec) -> World {
    let mut world = World::new();
    for b in &spec.bodies {
        let body = Body::new_box(b.name.clone(), b.half_extents, b.mass)
            .expect("morphology dimensions are positive")
            .at(b.position)
            .with_color(b.color);
        world.add_body(body);
    }
    for j in &spec.joints {
        let hinge = HingeJoint::new(j.parent, j.child, j.anchor_parent, j.anchor_child, j.axis)
            .with_limits(j.limit_lo, j.limit_hi)
            .with_motor(j.motor_max_torque);
        world.add_joint(hinge).expect("morphology joints are valid");
    }
    world.lift_to_clearance(SPAWN_CLEARANCE);
    world
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneBounds {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl GeneBounds {
    pub fn range(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

/// Bounds for every gene plus the joint limits the controller clamps to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenomeSpec {
    pub genes: Vec<GeneBounds>,
    pub joint_limits: Vec<(f64, f64)>,
}

impl GenomeSpec {
    pub fn for_morphology(m: &MorphologySpec) -> Self {
        let named: Vec<_> =
            m.joints.iter().map(|j| (j.name.clone(), j.limit_lo, j.limit_hi)).collect();
        Self::for_joints(&named)
    }

    /// From `(name, limit_lo, limit_hi)` per joint, in joint order.
    pub fn for_joints(joints: &[(String, f64, f64)]) -> Self {
        let mut genes = Vec::with_capacity(3 * joints.len() + 1);
        for (name, lo, hi) in joints {
            let half_range = (hi - lo) / 2.0;
            genes.push(GeneBounds {
                name: format!("{name}.amplitude"),
                lo: 0.0,
                hi: 0.8 * half_range,
            });
            genes.push(GeneBounds { name: format!("{name}.phase"), lo: 0.0, hi: TAU });
            genes.push(GeneBounds {
                name: format!("{name}.offset"),
                lo: 0.25 * lo,
                hi: 0.25 * hi,
            });
        }
        genes.push(GeneBounds {
            name: "frequency".into(),
            lo: FREQUENCY_RANGE.0,
            hi: FREQUENCY_RANGE.1,
        });
        Self { genes, joint_limits: joints.iter().map(|(_, lo, hi)| (*lo, *hi)).collect() }
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.joint_limits.len()
    }

    pub fn contains(&self, genes: &[f64]) -> bool {
        genes.len() == self.len() && self.genes.iter().zip(genes).all(|(b, g)| b.contains(*g))
    }

    fn check_len(&self, genes: &[f64]) -> Result<(), AnimatError> {
        if genes.len() != self.len() {
            return Err(AnimatError::LengthMismatch { expected: self.len(), got: genes.len() });
        }
        Ok(())
    }
}

/// `offset + amplitude · sin(2π f t + phase)` per joint, clamped into the
/// joint limits.
pub fn controller_targets(genes: &[f64], spec: &GenomeSpec, t: f64) -> Result<Vec<f64>, AnimatError> {
    spec.check_len(genes)?;
    let frequency = genes[genes.len() - 1];
    Ok(spec
        .joint_limits
        .iter()
        .zip(genes.chunks_exact(3))
        .map(|(&(lo, hi), g)| {
            let (amplitude, phase, offset) = (g[0], g[1], g[2]);
            (offset + amplitude * (2.0 * PI * frequency * t + phase).sin()).clamp(lo, hi)
        })
        .collect())
}

/// Targets with the oscillation removed: every joint at its offset.
pub fn hold_targets(genes: &[f64], spec: &GenomeSpec) -> Result<Vec<f64>, AnimatError> {
    spec.check_len(genes)?;
    Ok(spec
        .joint_limits
        .iter()
        .zip(genes.chunks_exact(3))
        .map(|(&(lo, hi), g)| g[2].clamp(lo, hi))
        .collect())
}

/// Writes [`controller_targets`] into the joints' motor targets.
pub fn apply_controller(
    world: &mut World,
    spec: &GenomeSpec,
    genes: &[f64],
    t: f64,
) -> Result<(), AnimatError> {
    let targets = controller_targets(genes, spec, t)?;
    set_targets(world, &targets);
    Ok(())
}

pub(crate) fn set_targets(world: &mut World, targets: &[f64]) {
    for (joint, target) in world.joints.iter_mut().zip(targets) {
        joint.motor_target_angle = *target;
    }
}
