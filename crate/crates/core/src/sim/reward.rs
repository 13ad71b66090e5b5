use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    /// Goal radius η_D (m).
    pub goal_radius: f64,
    pub goal_reward: f64,
    pub collision_reward: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            goal_radius: 0.2,
            goal_reward: 80.0,
            collision_reward: -100.0,
        }
    }
}

/// Goal reward inside the goal radius, otherwise the collision penalty,
/// otherwise `v − |ω| + (d_prev − d)`.
pub fn compute_reward(cfg: &RewardConfig, d: f64, d_prev: f64, v: f64, omega: f64, collided: bool) -> f64 {
    if d < cfg.goal_radius {
        cfg.goal_reward
    } else if collided {
        cfg.collision_reward
    } else {
        v - omega.abs() + (d_prev - d)
    }
}
