//! Evaluation suites, navigation metrics and optimal path lengths.

mod metrics;
pub mod planner;
mod suite;

pub use metrics::{
    compute_spl, compute_sr, compute_velocity, mean_reward, write_episodes_csv, write_metrics_csv, EpisodeRecord,
    MetricsReport, VelocityMode, METRICS_HEADER,
};
pub use planner::{optimal_path_length, OccupancyGrid};
pub use suite::{run_episode, run_suite, AgentPolicy, Policy, RandomPolicy, ScriptedPolicy};
