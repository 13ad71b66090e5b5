//! Point-cloud navigation with a pillar-based bird's-eye-view encoder,
//! contrastive auxiliary losses and a Soft Actor-Critic agent.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bev;
pub mod error;
pub mod eval;
pub mod sac;
pub mod sim;
pub mod ssl;
pub mod nn;
pub mod run;

pub use error::{Error, Result};
pub use bev::{EncoderConfig, PillarConfig, PointCloud};
pub use eval::{EpisodeRecord, MetricsReport, VelocityMode};
pub use run::{Profile, RunConfig, Trainer};
pub use sac::{Agent, AgentConfig, TrainConfig};
pub use sim::{Env, SimConfig, WorldSpec};
pub use ssl::SslConfig;
