use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::{PhysicsError, Quat, Result, Vec3};

/// Diagonal inertia of a solid box about its center, in the body frame.
///
/// `I = m/3 · (hy²+hz², hx²+hz², hx²+hy²)` for half-extents `h`.
pub fn box_inertia(mass: f64, half_extents: Vec3) -> Result<Vec3> {
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(PhysicsError::InvalidArgument(format!(
            "box mass must be positive and finite, got {mass}"
        )));
    }
    if half_extents.iter().any(|h| !(*h > 0.0) || !h.is_finite()) {
        return Err(PhysicsError::InvalidArgument(format!(
            "box half-extents must be positive, got {half_extents:?}"
        )));
    }
    let [hx, hy, hz] = [half_extents.x, half_extents.y, half_extents.z];
    let k = mass / 3.0;
    Ok(Vec3::new(
        k * (hy * hy + hz * hz),
        k * (hx * hx + hz * hz),
        k * (hx * hx + hy * hy),
    ))
}

/// A box-shaped rigid body.
///
/// Static bodies carry `mass = ∞` and a zero inverse inertia; they never
/// move and are skipped by contact generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub id: usize,
    pub name: String,
    pub half_extents: Vec3,
    #[serde(with = "mass_serde")]
    pub mass: f64,
    pub inv_inertia_body: Vec3,
    pub position: Vec3,
    pub orientation: Quat,
    pub linear_velocity: Vec3,
    /// World frame.
    pub angular_velocity: Vec3,
    /// Playback metadata only.
    pub color: [f64; 3],
}

impl Body {
    /// Dynamic box at the origin. The id is assigned by [`super::World::add_body`].
    pub fn new_box(name: impl Into<String>, half_extents: Vec3, mass: f64) -> Result<Self> {
        let inertia = box_inertia(mass, half_extents)?;
        Ok(Self {
            id: 0,
            name: name.into(),
            half_extents,
            mass,
            inv_inertia_body: inertia.map(|i| 1.0 / i),
            position: Vec3::zeros(),
            orientation: Quat::identity(),
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            color: [0.7, 0.7, 0.7],
        })
    }

    pub fn new_static_box(name: impl Into<String>, half_extents: Vec3) -> Result<Self> {
        // validates the extents
        box_inertia(1.0, half_extents)?;
        Ok(Self {
            id: 0,
            name: name.into(),
            half_extents,
            mass: f64::INFINITY,
            inv_inertia_body: Vec3::zeros(),
            position: Vec3::zeros(),
            orientation: Quat::identity(),
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            color: [0.4, 0.4, 0.4],
        })
    }

    pub fn at(mut self, position: Vec3) -> Self {
        self.position = position;
        self
    }

    pub fn with_orientation(mut self, orientation: Quat) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn with_color(mut self, color: [f64; 3]) -> Self {
        self.color = color;
        self
    }

    pub fn is_static(&self) -> bool {
        self.mass.is_infinite()
    }

    pub fn inv_mass(&self) -> f64 {
        if self.is_static() {
            0.0
        } else {
            1.0 / self.mass
        }
    }

    /// `R · diag(inv_inertia_body) · Rᵀ`
    pub fn inv_inertia_world(&self) -> Matrix3<f64> {
        let r = self.orientation.to_rotation_matrix();
        let r = r.matrix();
        r * Matrix3::from_diagonal(&self.inv_inertia_body) * r.transpose()
    }

    /// Maps a body-local point to world coordinates.
    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.position + self.orientation * local
    }

    pub(crate) fn first_non_finite(&self) -> bool {
        !(self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
            && self.linear_velocity.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite()))
    }
}

/// JSON has no infinity; static masses travel as the string `"inf"`.
pub(crate) mod mass_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(mass: &f64, s: S) -> Result<S::Ok, S::Error> {
        if mass.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*mass)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!("invalid mass {t:?}"))),
        }
    }
}
