//! Soft Actor-Critic over BEV latents and goal features.

mod agent;
mod config;
pub mod gradcheck;
pub mod policy;
mod replay;

pub use agent::{
    actor_loss, alpha_loss, critic_loss, goal_features, record, rng_stream, streams, td_target, Agent, AgentConfig,
    Networks, UpdateMetrics,
};
pub use config::TrainConfig;
pub use replay::{Episode, Index, ObsRecord, ReplayBuffer};
