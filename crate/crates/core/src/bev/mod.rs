//! Point cloud → pillar grid → sparse-dense BEV network → latent state.

mod cloud;
mod config;
mod encoder;
mod grid;
pub mod sparse;

pub use cloud::{downsample_cloud, Frame, PointCloud};
pub use config::{EncoderConfig, PillarConfig, PILLAR_FEATURES};
pub use encoder::{BevEncoder, ConvBlock, Encoded, PreparedBatch};
pub use grid::{pillarize, Pillar, SparseBEVGrid};
