use serde::{Deserialize, Serialize};

use super::{Body, Vec3, World};

/// A box vertex below the ground plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub body: usize,
    /// Vertex index in [`box_vertices`] order; keys warm starting.
    pub vertex: u8,
    pub point: Vec3,
    pub normal: Vec3,
    pub penetration: f64,
}

/// Corner `i` has sign `-` or `+` on x/y/z for bits 0/1/2 of `i`.
pub fn box_vertices(body: &Body) -> [Vec3; 8] {
    let h = body.half_extents;
    std::array::from_fn(|i| {
        let local = Vec3::new(
            if i & 1 == 0 { -h.x } else { h.x },
            if i & 2 == 0 { -h.y } else { h.y },
            if i & 4 == 0 { -h.z } else { h.z },
        );
        body.to_world(&local)
    })
}

/// One contact per dynamic-body vertex strictly below `y = 0`.
pub fn detect_ground_contacts(world: &World) -> Vec<Contact> {
    let mut out = Vec::new();
    for body in world.bodies.iter().filter(|b| !b.is_static()) {
        for (i, p) in box_vertices(body).iter().enumerate() {
            if p.y < 0.0 {
                out.push(Contact {
                    body: body.id,
                    vertex: i as u8,
                    point: *p,
                    normal: Vec3::y(),
                    penetration: -p.y,
                });
            }
        }
    }
    out
}
