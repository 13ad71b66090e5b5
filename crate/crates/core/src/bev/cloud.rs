use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Frame {
    /// x right, y forward, z up from the floor below the camera.
    #[default]
    Camera,
    Robot,
}

/// Points in meters.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<[f32; 3]>,
    pub frame: Frame,
}

impl PointCloud {
    pub fn new(points: Vec<[f32; 3]>) -> Self {
        Self {
            points,
            frame: Frame::Camera,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    /// Reads whitespace-separated `x y z` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn read_xyz(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 values, found {}", fields.len())));
            }
            let mut p = [0f32; 3];
            for (slot, f) in p.iter_mut().zip(&fields) {
                *slot = f
                    .parse::<f32>()
                    .map_err(|e| parse_err(format!("`{f}`: {e}")))?;
                if !slot.is_finite() {
                    return Err(parse_err(format!("`{f}` is not finite")));
                }
            }
            points.push(p);
        }
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(Self::new(points))
    }
}

/// Resamples `raw` to exactly `target` points: a uniform subset without
/// replacement when larger, the original points plus uniform duplicates
/// when smaller.
pub fn downsample_cloud<R: Rng>(raw: &PointCloud, target: usize, rng: &mut R) -> Result<PointCloud> {
    let n = raw.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let points = if n == target {
        raw.points.clone()
    } else if n > target {
        index::sample(rng, n, target)
            .into_iter()
            .map(|i| raw.points[i])
            .collect()
    } else {
        let mut pts = raw.points.clone();
        pts.extend((n..target).map(|_| raw.points[rng.gen_range(0..n)]));
        pts
    };
    Ok(PointCloud {
        points,
        frame: raw.frame,
    })
}
