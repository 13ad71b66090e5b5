//! Ray and disc queries against extruded boxes, cylinders and the arena.

use serde::{Deserialize, Serialize};

/// Axis-aligned box standing on the floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxObstacle {
    pub center: [f64; 2],
    pub size: [f64; 2],
    #[serde(default = "default_box_height")]
    pub height: f64,
}

fn default_box_height() -> f64 {
    1.0
}

impl BoxObstacle {
    pub fn min(&self) -> [f64; 2] {
        [self.center[0] - self.size[0] / 2.0, self.center[1] - self.size[1] / 2.0]
    }

    pub fn max(&self) -> [f64; 2] {
        [self.center[0] + self.size[0] / 2.0, self.center[1] + self.size[1] / 2.0]
    }

    /// Planar distance from `p` to the box; zero inside.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let (lo, hi) = (self.min(), self.max());
        let dx = (lo[0] - p[0]).max(0.0).max(p[0] - hi[0]);
        let dy = (lo[1] - p[1]).max(0.0).max(p[1] - hi[1]);
        dx.hypot(dy)
    }

    /// Entry distance of the ray along unit `dir`, if it hits.
    pub fn ray(&self, o: [f64; 3], dir: [f64; 3]) -> Option<f64> {
        let (lo, hi) = (self.min(), self.max());
        let lo = [lo[0], lo[1], 0.0];
        let hi = [hi[0], hi[1], self.height];
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if o[a] < lo[a] || o[a] > hi[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let (mut ta, mut tb) = ((lo[a] - o[a]) * inv, (hi[a] - o[a]) * inv);
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

/// Entry distance of a ray into a vertical cylinder standing on the floor.
pub fn ray_cylinder(o: [f64; 3], dir: [f64; 3], center: [f64; 2], radius: f64, height: f64) -> Option<f64> {
    let (px, py) = (o[0] - center[0], o[1] - center[1]);
    let a = dir[0] * dir[0] + dir[1] * dir[1];
    if a < 1e-15 {
        return None;
    }
    let b = px * dir[0] + py * dir[1];
    let c = px * px + py * py - radius * radius;
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let t = if c <= 0.0 { 0.0 } else { (-b - disc.sqrt()) / a };
    if t < 0.0 {
        return None;
    }
    let z = o[2] + t * dir[2];
    (0.0..=height).contains(&z).then_some(t)
}

/// Exit distance from a square arena `[-half, half]²` through its walls,
/// if the hit lies below the wall top.
pub fn ray_walls(o: [f64; 3], dir: [f64; 3], half: f64, wall_height: f64) -> Option<f64> {
    let mut t = f64::INFINITY;
    for a in 0..2 {
        if dir[a] > 1e-15 {
            t = t.min((half - o[a]) / dir[a]);
        } else if dir[a] < -1e-15 {
            t = t.min((-half - o[a]) / dir[a]);
        }
    }
    let z = o[2] + t * dir[2];
    (t.is_finite() && t >= 0.0 && (0.0..=wall_height).contains(&z)).then_some(t)
}

pub fn ray_floor(o: [f64; 3], dir: [f64; 3]) -> Option<f64> {
    (dir[2] < -1e-15).then(|| -o[2] / dir[2])
}

/// Clearance between the point `p` and the inside of the arena walls.
pub fn wall_distance(p: [f64; 2], half: f64) -> f64 {
    (half - p[0].abs()).min(half - p[1].abs())
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}
