use serde::{Deserialize, Serialize};

use super::joint::JointImpulses;
use super::{
    solver, Body, HingeJoint, PhysicsError, Result, Vec3, DEFAULT_DT, DEFAULT_GRAVITY,
    DEFAULT_SOLVER_ITERATIONS,
};
use crate::digest::Digest64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub friction: f64,
    pub restitution: f64,
}

impl Default for GroundPlane {
    fn default() -> Self {
        Self { friction: 0.8, restitution: 0.0 }
    }
}

/// Simulation state. Body ids are dense `0..N` in list order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub gravity: Vec3,
    dt: f64,
    pub solver_iterations: usize,
    pub ground: GroundPlane,
    pub bodies: Vec<Body>,
    pub joints: Vec<HingeJoint>,
    pub step_count: u64,
    /// Normal and two tangent impulses per body vertex from the last step.
    #[serde(default)]
    pub(crate) contact_cache: Vec<[[f64; 3]; 8]>,
}

impl Default for World {
    fn default() -> Self {
        Self::new()
    }
}

impl World {
    pub fn new() -> Self {
        Self {
            gravity: Vec3::from(DEFAULT_GRAVITY),
            dt: DEFAULT_DT,
            solver_iterations: DEFAULT_SOLVER_ITERATIONS,
            ground: GroundPlane::default(),
            bodies: Vec::new(),
            joints: Vec::new(),
            step_count: 0,
            contact_cache: Vec::new(),
        }
    }

    pub fn with_dt(dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(PhysicsError::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Self { dt, ..Self::new() })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Appends a body, assigning it the next dense id.
    pub fn add_body(&mut self, mut body: Body) -> usize {
        let id = self.bodies.len();
        body.id = id;
        self.bodies.push(body);
        self.contact_cache.push([[0.0; 3]; 8]);
        id
    }

    /// Appends a hinge, capturing the current relative orientation of its
    /// bodies as the zero angle.
    pub fn add_joint(&mut self, mut joint: HingeJoint) -> Result<usize> {
        joint.validate(self.bodies.len())?;
        let id = self.joints.len();
        joint.id = id;
        let qp = self.bodies[joint.parent].orientation;
        let qc = self.bodies[joint.child].orientation;
        joint.reference = qp.inverse() * qc;
        joint.warm = JointImpulses::default();
        self.joints.push(joint);
        Ok(id)
    }

    /// Advances the world by one fixed timestep.
    ///
    /// On divergence the world is left in its partially integrated state.
    pub fn step(&mut self) -> Result<()> {
        solver::step(self)
    }

    pub fn step_n(&mut self, n: usize) -> Result<()> {
        for _ in 0..n {
            self.step()?;
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.step_count as f64 * self.dt
    }

    /// Translates every body so the lowest box vertex sits at `height`.
    pub fn lift_to_clearance(&mut self, height: f64) {
        let lowest = self
            .bodies
            .iter()
            .flat_map(|b| super::box_vertices(b).map(|v| v.y))
            .fold(f64::INFINITY, f64::min);
        if lowest.is_finite() {
            let dy = height - lowest;
            for b in &mut self.bodies {
                b.position.y += dy;
            }
        }
    }

    /// Hash over the step counter and every body's pose and velocity.
    /// Names, colors and solver caches do not participate.
    pub fn digest(&self) -> String {
        let mut d = Digest64::new();
        d.update(&self.step_count.to_le_bytes());
        d.update(&(self.bodies.len() as u64).to_le_bytes());
        for b in &self.bodies {
            let q = b.orientation;
            for v in b.position.iter() {
                d.update_f64(*v);
            }
            for v in [q.w, q.i, q.j, q.k] {
                d.update_f64(v);
            }
            for v in b.linear_velocity.iter().chain(b.angular_velocity.iter()) {
                d.update_f64(*v);
            }
        }
        d.finish()
    }
}

pub fn world_digest(world: &World) -> String {
    world.digest()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn falling_cube() -> World {
        let mut w = World::new();
        w.add_body(
            Body::new_box("cube", Vec3::new(0.5, 0.5, 0.5), 1.0)
                .unwrap()
                .at(Vec3::new(0.0, 10.0, 0.0)),
        );
        w
    }

    #[test]
    fn digest_tracks_state() {
        let w = falling_cube();
        assert_eq!(w.digest(), w.clone().digest());
        let mut stepped = w.clone();
        stepped.step().unwrap();
        assert_ne!(w.digest(), stepped.digest());
    }

    #[test]
    fn digest_survives_serialization() {
        let mut w = falling_cube();
        w.bodies[0].angular_velocity = Vec3::new(0.3, -1.7, 2.0);
        w.step_n(17).unwrap();
        let text = serde_json::to_string(&w).unwrap();
        let back: World = serde_json::from_str(&text).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.digest(), w.digest());
        // and continued stepping agrees bit for bit
        let (mut a, mut b) = (w, back);
        a.step_n(50).unwrap();
        b.step_n(50).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn digest_ignores_color() {
        let mut a = falling_cube();
        let mut b = falling_cube();
        b.bodies[0].color = [1.0, 0.0, 0.25];
        assert_eq!(a.digest(), b.digest());
        a.step_n(300).unwrap();
        b.step_n(300).unwrap();
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn rejects_bad_dt() {
        assert!(World::with_dt(0.0).is_err());
        assert!(World::with_dt(-0.01).is_err());
        assert!(World::with_dt(f64::NAN).is_err());
        assert_eq!(World::with_dt(0.01).unwrap().dt(), 0.01);
    }

    #[test]
    fn lift_places_lowest_vertex() {
        let mut w = falling_cube();
        w.lift_to_clearance(0.01);
        assert!((w.bodies[0].position.y - 0.51).abs() < 1e-12);
    }
}
