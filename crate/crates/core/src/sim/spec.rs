use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{BoxObstacle, RewardConfig};

/// Walking speed of every pedestrian (m/s).
pub const PEDESTRIAN_SPEED: f64 = 1.0;

/// A pedestrian walking a closed waypoint loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PedestrianSpec {
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default = "default_ped_radius")]
    pub radius: f64,
    #[serde(default = "default_ped_height")]
    pub height: f64,
}

fn default_ped_radius() -> f64 {
    0.25
}

fn default_ped_height() -> f64 {
    1.7
}

fn default_wall_height() -> f64 {
    1.0
}

fn default_box_side() -> (f64, f64) {
    (0.5, 1.5)
}

/// Arena layout. Fixed entities are listed explicitly; `random_boxes` and
/// `random_pedestrians` are drawn at every reset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub name: String,
    pub half_extent: f64,
    #[serde(default = "default_wall_height")]
    pub wall_height: f64,
    #[serde(default)]
    pub boxes: Vec<BoxObstacle>,
    #[serde(default)]
    pub random_boxes: usize,
    #[serde(default = "default_box_side")]
    pub random_box_side: (f64, f64),
    #[serde(default)]
    pub pedestrians: Vec<PedestrianSpec>,
    #[serde(default)]
    pub random_pedestrians: usize,
}

impl WorldSpec {
    /// 20 × 20 m with six random boxes.
    pub fn square() -> Self {
        Self {
            name: "square".into(),
            half_extent: 10.0,
            wall_height: default_wall_height(),
            boxes: Vec::new(),
            random_boxes: 6,
            random_box_side: default_box_side(),
            pedestrians: Vec::new(),
            random_pedestrians: 0,
        }
    }

    /// 16 × 16 m with four fixed columns and `peds` walking pedestrians.
    pub fn lobby(peds: usize) -> Self {
        let column = |x: f64, y: f64| BoxObstacle {
            center: [x, y],
            size: [0.8, 0.8],
            height: 3.0,
        };
        Self {
            name: "lobby".into(),
            half_extent: 8.0,
            wall_height: 3.0,
            boxes: vec![column(-4.0, -4.0), column(4.0, -4.0), column(-4.0, 4.0), column(4.0, 4.0)],
            random_boxes: 0,
            random_box_side: default_box_side(),
            pedestrians: Vec::new(),
            random_pedestrians: peds,
        }
    }

    /// 10 × 10 m and empty, optionally with pedestrians.
    pub fn open(peds: usize) -> Self {
        Self {
            name: "open".into(),
            half_extent: 5.0,
            wall_height: default_wall_height(),
            boxes: Vec::new(),
            random_boxes: 0,
            random_box_side: default_box_side(),
            pedestrians: Vec::new(),
            random_pedestrians: peds,
        }
    }

    /// Built-in scenario by name, with `peds` random pedestrians added.
    pub fn preset(name: &str, peds: usize) -> Result<Self> {
        let mut spec = match name {
            "square" => Self::square(),
            "lobby" => return Ok(Self::lobby(peds)),
            "open" => Self::open(0),
            other => {
                return Err(Error::config(
                    "scenario",
                    format!("unknown scenario `{other}` (expected square, lobby or open)"),
                ))
            }
        };
        spec.random_pedestrians = peds;
        Ok(spec)
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let spec: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn diagonal(&self) -> f64 {
        2.0 * self.half_extent * std::f64::consts::SQRT_2
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.half_extent;
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::config("world.half_extent", "must be positive"));
        }
        if !(self.wall_height > 0.0) {
            return Err(Error::config("world.wall_height", "must be positive"));
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let (lo, hi) = (b.min(), b.max());
            if b.size.iter().any(|&s| !(s > 0.0)) || !(b.height > 0.0) {
                return Err(Error::config(format!("world.boxes[{i}]"), "sizes must be positive"));
            }
            if lo.iter().chain(&hi).any(|v| v.abs() > h) {
                return Err(Error::config(format!("world.boxes[{i}]"), "lies outside the arena"));
            }
        }
        let (smin, smax) = self.random_box_side;
        if !(smin > 0.0 && smin <= smax && smax < h) {
            return Err(Error::config("world.random_box_side", "need 0 < min <= max < half_extent"));
        }
        for (i, p) in self.pedestrians.iter().enumerate() {
            if p.waypoints.is_empty() {
                return Err(Error::config(format!("world.pedestrians[{i}]"), "needs waypoints"));
            }
            if p.waypoints.iter().flatten().any(|v| v.abs() > h) {
                return Err(Error::config(format!("world.pedestrians[{i}]"), "waypoint outside the arena"));
            }
            if !(p.radius > 0.0 && p.height > 0.0) {
                return Err(Error::config(format!("world.pedestrians[{i}]"), "radius and height must be positive"));
            }
        }
        Ok(())
    }
}

/// Robot, sensor and episode constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub max_steps: usize,
    pub robot_radius: f64,
    pub camera_height: f64,
    pub hfov_deg: f64,
    pub vfov_deg: f64,
    pub rays_h: usize,
    pub rays_v: usize,
    pub min_range: f64,
    pub max_range: f64,
    /// Points per observation after downsampling.
    pub cloud_points: usize,
    pub goal_min_distance: f64,
    pub reward: RewardConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            max_steps: 500,
            robot_radius: 0.3,
            camera_height: 0.45,
            hfov_deg: 85.0,
            vfov_deg: 58.0,
            rays_h: 64,
            rays_v: 24,
            min_range: 0.3,
            max_range: 10.0,
            cloud_points: 1024,
            goal_min_distance: 2.0,
            reward: RewardConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn desk() -> Self {
        Self {
            cloud_points: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sim.dt", self.dt),
            ("sim.robot_radius", self.robot_radius),
            ("sim.camera_height", self.camera_height),
            ("sim.hfov_deg", self.hfov_deg),
            ("sim.vfov_deg", self.vfov_deg),
            ("sim.max_range", self.max_range),
            ("sim.reward.goal_radius", self.reward.goal_radius),
        ];
        for (field, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::config("sim.max_steps", "must be at least 1"));
        }
        if self.rays_h < 2 || self.rays_v < 2 {
            return Err(Error::config("sim.rays_h", "ray grid needs at least 2×2 rays"));
        }
        if !(self.min_range >= 0.0 && self.min_range < self.max_range) {
            return Err(Error::config("sim.min_range", "need 0 <= min_range < max_range"));
        }
        if self.cloud_points == 0 {
            return Err(Error::config("sim.cloud_points", "must be at least 1"));
        }
        if !(self.goal_min_distance >= 0.0) {
            return Err(Error::config("sim.goal_min_distance", "must be non-negative"));
        }
        Ok(())
    }
}
