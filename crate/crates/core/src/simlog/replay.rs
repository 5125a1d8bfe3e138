//! Conversions between worlds and log records, and replay verification.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde_json::Map;

use super::{BodyEntry, Frame, JointEntry, LogError, LogHeader, LogReader, Result, LOG_VERSION};
use crate::animats::GenomeSpec;
use crate::evolution::{run_schedule, EvolutionParams};
use crate::physics::{Body, HingeJoint, Quat, Vec3, World};

/// Same-build replays must agree to this many meters.
pub const SAME_BUILD_TOLERANCE: f64 = 1e-9;
/// Replays on a different build or platform are held to this.
pub const CROSS_BUILD_TOLERANCE: f64 = 1e-6;

pub fn header_from_world(world: &World, meta: BTreeMap<String, String>) -> LogHeader {
    LogHeader {
        version: LOG_VERSION,
        dt: world.dt(),
        gravity: world.gravity.into(),
        bodies: world
            .bodies
            .iter()
            .map(|b| BodyEntry {
                id: b.id,
                name: b.name.clone(),
                shape: "box".into(),
                half_extents: b.half_extents.into(),
                mass: b.mass,
                color: b.color,
                position: Some(b.position.into()),
                orientation: Some(quat_array(&b.orientation)),
                extra: Map::new(),
            })
            .collect(),
        joints: world
            .joints
            .iter()
            .map(|j| JointEntry {
                id: j.id,
                parent: j.parent,
                child: j.child,
                anchor_parent: j.anchor_parent.into(),
                anchor_child: j.anchor_child.into(),
                axis_parent: j.axis_parent.into(),
                limits: [j.limit_lo, j.limit_hi],
                axis_child: Some(j.axis_child.into()),
                motor_max_torque: Some(j.motor_max_torque),
                extra: Map::new(),
            })
            .collect(),
        meta,
        solver_iterations: Some(world.solver_iterations),
        extra: Map::new(),
    }
}

fn quat_array(q: &Quat) -> [f64; 4] {
    [q.w, q.i, q.j, q.k]
}

pub fn frame_from_world(world: &World) -> Frame {
    Frame::new(
        world.time(),
        world
            .bodies
            .iter()
            .map(|b| {
                let p = b.position;
                let q = b.orientation;
                [p.x, p.y, p.z, q.w, q.i, q.j, q.k]
            })
            .collect(),
    )
}

/// Rebuilds the initial world described by a header. Requires the optional
/// pose, child-axis and motor fields this crate writes.
pub fn world_from_header(header: &LogHeader) -> Result<World> {
    let missing = |what: String| LogError::CannotReplay(format!("header lacks {what}"));
    let mut world = World::with_dt(header.dt).map_err(|e| LogError::CannotReplay(e.to_string()))?;
    world.gravity = Vec3::from(header.gravity);
    if let Some(n) = header.solver_iterations {
        world.solver_iterations = n;
    }
    for b in &header.bodies {
        let position = b.position.ok_or_else(|| missing(format!("position of body {}", b.id)))?;
        let [w, x, y, z] =
            b.orientation.ok_or_else(|| missing(format!("orientation of body {}", b.id)))?;
        let half = Vec3::from(b.half_extents);
        let body = if b.mass.is_infinite() {
            Body::new_static_box(b.name.clone(), half)
        } else {
            Body::new_box(b.name.clone(), half, b.mass)
        }
        .map_err(|e| LogError::CannotReplay(e.to_string()))?;
        // stored orientations are already unit length; keep them bit-exact
        let q = Quat::new_unchecked(nalgebra::Quaternion::new(w, x, y, z));
        world.add_body(body.at(Vec3::from(position)).with_orientation(q).with_color(b.color));
    }
    for j in &header.joints {
        let axis_child = j.axis_child.ok_or_else(|| missing(format!("axis_child of joint {}", j.id)))?;
        let torque =
            j.motor_max_torque.ok_or_else(|| missing(format!("motor_max_torque of joint {}", j.id)))?;
        let hinge = HingeJoint::new(
            j.parent,
            j.child,
            Vec3::from(j.anchor_parent),
            Vec3::from(j.anchor_child),
            Vec3::from(j.axis_parent),
        )
        .with_child_axis(Vec3::from(axis_child))
        .with_limits(j.limits[0], j.limits[1])
        .with_motor(torque);
        world.add_joint(hinge).map_err(|e| LogError::CannotReplay(e.to_string()))?;
    }
    Ok(world)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub frames_compared: usize,
    /// Frames the replayed schedule would produce.
    pub frames_expected: usize,
    pub max_position_error: f64,
    /// Largest rotation angle between logged and replayed orientations, rad.
    pub max_orientation_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn meta_field<'a>(header: &'a LogHeader, key: &str) -> Result<&'a str> {
    header
        .meta
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| LogError::CannotReplay(format!("meta has no {key:?} entry")))
}

/// Rebuilds the world from the header, re-runs the controller schedule named
/// in its meta, and compares every logged frame.
///
/// Passes when every logged frame is within `tolerance` meters of the replay
/// and the log has no more frames than the schedule produces. A log with
/// fewer frames (for example header-only) is compared over what it has.
pub fn replay_verify<R: BufRead>(source: R, tolerance: f64) -> Result<ReplayReport> {
    let mut reader = LogReader::new(source)?;
    let header = reader.header().clone();
    let genes: Vec<f64> = serde_json::from_str(meta_field(&header, "genome")?)
        .map_err(|e| LogError::CannotReplay(format!("genome meta: {e}")))?;
    let params: EvolutionParams = serde_json::from_str(meta_field(&header, "params")?)
        .map_err(|e| LogError::CannotReplay(format!("params meta: {e}")))?;
    let torso: usize = match header.meta.get("torso_id") {
        Some(t) => t.parse().map_err(|_| LogError::CannotReplay(format!("bad torso_id {t:?}")))?,
        None => 0,
    };

    let mut world = world_from_header(&header)?;
    let named: Vec<_> =
        header.joints.iter().map(|j| (format!("joint{}", j.id), j.limits[0], j.limits[1])).collect();
    let spec = GenomeSpec::for_joints(&named);
    if genes.len() != spec.len() {
        return Err(LogError::CannotReplay(format!(
            "genome has {} genes but the header's joints need {}",
            genes.len(),
            spec.len()
        )));
    }

    let mut report = ReplayReport {
        frames_compared: 0,
        frames_expected: 0,
        max_position_error: 0.0,
        max_orientation_error: 0.0,
        tolerance,
        pass: false,
    };
    let mut pending: Option<Result<Frame>> = reader.next();
    let mut failure: Option<LogError> = None;
    let outcome = run_schedule(&mut world, &spec, &genes, &params, torso, |w| {
        report.frames_expected += 1;
        match pending.take() {
            None => true,
            Some(Err(e)) => {
                failure = Some(e);
                false
            }
            Some(Ok(frame)) => {
                compare(&mut report, &frame, w);
                pending = reader.next();
                true
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let extra_frames = match pending {
        None => false,
        Some(Ok(_)) => true,
        Some(Err(e)) => return Err(e),
    };
    let diverged = outcome.is_err();
    report.pass = !extra_frames
        && !diverged
        && report.max_position_error <= tolerance
        && report.max_position_error.is_finite();
    Ok(report)
}

fn compare(report: &mut ReplayReport, frame: &Frame, world: &World) {
    for (state, body) in frame.states.iter().zip(&world.bodies) {
        let logged_p = Vec3::new(state[0], state[1], state[2]);
        let pos_err = (logged_p - body.position).norm();
        let q = body.orientation;
        let logged = nalgebra::Vector4::new(state[3], state[4], state[5], state[6]);
        let mut replayed = nalgebra::Vector4::new(q.w, q.i, q.j, q.k);
        if logged.dot(&replayed) < 0.0 {
            replayed = -replayed;
        }
        // atan2 form stays exact near zero, unlike acos of the dot product
        let ang_err = 4.0 * (logged - replayed).norm().atan2((logged + replayed).norm());
        report.max_position_error = report.max_position_error.max(pos_err);
        report.max_orientation_error = report.max_orientation_error.max(ang_err);
    }
    report.frames_compared += 1;
}
