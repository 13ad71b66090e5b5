use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of per-pillar input features.
pub const PILLAR_FEATURES: usize = 6;

/// Pillar grid geometry. Rows index `x`, columns index `y`; `z` is collapsed
/// into each pillar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PillarConfig {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub cell_x: f64,
    pub cell_y: f64,
}

impl PillarConfig {
    /// The literal constants: 0.15 m × 0.016 m pillars, z in (0, 10).
    pub fn paper() -> Self {
        Self {
            x_range: (-9.6, 9.6),
            y_range: (-1.6, 0.448),
            z_range: (0.0, 10.0),
            cell_x: 0.15,
            cell_y: 0.016,
        }
    }

    /// Camera-frame preset for the simulator: x lateral, y forward, z height.
    pub fn sim() -> Self {
        Self {
            x_range: (-9.6, 9.6),
            y_range: (0.0, 9.6),
            z_range: (0.0, 2.0),
            cell_x: 0.15,
            cell_y: 0.075,
        }
    }

    /// 64 × 64 grid over the camera's forward half-plane.
    pub fn desk() -> Self {
        Self {
            x_range: (-4.8, 4.8),
            y_range: (0.0, 9.6),
            z_range: (0.0, 2.0),
            cell_x: 0.15,
            cell_y: 0.15,
        }
    }

    fn axis_cells(field: &str, range: (f64, f64), cell: f64) -> Result<usize> {
        if !(range.0.is_finite() && range.1.is_finite() && range.0 < range.1) {
            return Err(Error::config(field, format!("invalid range {range:?}")));
        }
        if !(cell.is_finite() && cell > 0.0) {
            return Err(Error::config(field, format!("cell size {cell} must be positive")));
        }
        let cells = (range.1 - range.0) / cell;
        let rounded = cells.round();
        if (cells - rounded).abs() > 1e-6 || rounded < 1.0 {
            return Err(Error::config(
                field,
                format!("extent {} is not a whole number of {cell} m cells", range.1 - range.0),
            ));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims().map(|_| ())
    }

    /// Grid dims `(H, W)`.
    pub fn dims(&self) -> Result<(usize, usize)> {
        let h = Self::axis_cells("pillar.x_range", self.x_range, self.cell_x)?;
        let w = Self::axis_cells("pillar.y_range", self.y_range, self.cell_y)?;
        if !(self.z_range.0.is_finite() && self.z_range.1.is_finite() && self.z_range.0 < self.z_range.1)
        {
            return Err(Error::config("pillar.z_range", format!("invalid range {:?}", self.z_range)));
        }
        Ok((h, w))
    }
}

/// Channel widths of the sparse-dense network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Output channels of each stride-2 sparse block.
    pub sparse_channels: Vec<usize>,
    pub dense_channels: usize,
    pub dense_blocks: usize,
}

impl EncoderConfig {
    pub fn paper() -> Self {
        Self {
            sparse_channels: vec![16, 32, 64, 128],
            dense_channels: 128,
            dense_blocks: 3,
        }
    }

    pub fn desk() -> Self {
        Self {
            sparse_channels: vec![8, 16, 32, 32],
            dense_channels: 32,
            dense_blocks: 3,
        }
    }

    pub fn latent_dim(&self) -> usize {
        if self.dense_blocks == 0 {
            *self.sparse_channels.last().unwrap_or(&PILLAR_FEATURES)
        } else {
            self.dense_channels
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sparse_channels.is_empty() {
            return Err(Error::config("encoder.sparse_channels", "need at least one sparse block"));
        }
        if self.sparse_channels.contains(&0) {
            return Err(Error::config("encoder.sparse_channels", "channel counts must be positive"));
        }
        if self.dense_blocks > 0 && self.dense_channels == 0 {
            return Err(Error::config("encoder.dense_channels", "must be positive"));
        }
        Ok(())
    }

    /// Spatial dims after every stride-2 stage.
    pub fn output_dims(&self, grid: (usize, usize)) -> (usize, usize) {
        let mut hw = grid;
        for _ in &self.sparse_channels {
            hw = (hw.0.div_ceil(2), hw.1.div_ceil(2));
        }
        hw
    }
}
