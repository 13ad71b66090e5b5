use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::Result;

use super::{PillarConfig, PointCloud, PILLAR_FEATURES};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pillar {
    pub count: u32,
    /// `[ln(1+count), mean Δx, mean Δy, mean z, min z, max z]`. Offsets are
    /// measured from the cell center in units of the cell size.
    pub features: [f32; PILLAR_FEATURES],
}

/// Occupied cells keyed by `(row, col)`, iterated in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseBEVGrid {
    pub height: usize,
    pub width: usize,
    pub cells: BTreeMap<(u32, u32), Pillar>,
}

impl SparseBEVGrid {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cells: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn total_count(&self) -> u64 {
        self.cells.values().map(|p| p.count as u64).sum()
    }

    /// Per-cell point counts, `height × width`, row-major.
    pub fn counts(&self) -> Vec<u32> {
        let mut out = vec![0; self.height * self.width];
        for (&(r, c), p) in &self.cells {
            out[r as usize * self.width + c as usize] = p.count;
        }
        out
    }

    pub fn occupancy_csv(&self) -> String {
        let counts = self.counts();
        let mut s = String::new();
        for row in counts.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            let _ = writeln!(s, "{}", line.join(","));
        }
        s
    }

    /// Binary 8-bit PGM of the counts; any occupied cell is at least 1.
    /// A non-empty `comment` goes on a `#` line after the magic number.
    pub fn occupancy_pgm(&self, comment: &str) -> Vec<u8> {
        let counts = self.counts();
        let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let comment = if comment.is_empty() { String::new() } else { format!("# {comment}\n") };
        let mut out = format!("P5\n{comment}{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(counts.iter().map(|&c| {
            if c == 0 {
                0
            } else {
                ((255.0 * c as f64 / max).round() as u8).max(1)
            }
        }));
        out
    }

    /// One `row,col,count,f0..f5` line per occupied cell.
    pub fn pillars_csv(&self) -> String {
        let mut s = String::from("row,col,count,log_count,dx,dy,z_mean,z_min,z_max\n");
        for (&(r, c), p) in &self.cells {
            let f: Vec<String> = p.features.iter().map(f32::to_string).collect();
            let _ = writeln!(s, "{r},{c},{},{}", p.count, f.join(","));
        }
        s
    }
}

fn in_range(v: f64, r: (f64, f64)) -> bool {
    v >= r.0 && v < r.1
}

/// Maps `f32` to `u32` preserving [`f32::total_cmp`] order.
fn total_key(v: f32) -> u32 {
    let b = v.to_bits() as i32;
    (b ^ (((b >> 31) as u32) >> 1) as i32) as u32 ^ 0x8000_0000
}

/// Bins the in-range points of `cloud` into pillars. Points in each cell are
/// aggregated in sorted order, so the result does not depend on input order.
pub fn pillarize(cloud: &PointCloud, cfg: &PillarConfig) -> Result<SparseBEVGrid> {
    let (h, w) = cfg.dims()?;
    let mut binned: Vec<((u32, u32), [f32; 3])> = cloud
        .points
        .iter()
        .filter_map(|p| {
            let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
            if !(in_range(x, cfg.x_range) && in_range(y, cfg.y_range) && in_range(z, cfg.z_range)) {
                return None;
            }
            let r = (((x - cfg.x_range.0) / cfg.cell_x).floor() as usize).min(h - 1);
            let c = (((y - cfg.y_range.0) / cfg.cell_y).floor() as usize).min(w - 1);
            Some(((r as u32, c as u32), *p))
        })
        .collect();
    binned.sort_unstable_by_key(|&((r, c), p)| {
        let [x, y, z] = p.map(total_key);
        ((r as u128 * w as u128 + c as u128) << 96) | (x as u128) << 64 | (y as u128) << 32 | z as u128
    });

    let mut grid = SparseBEVGrid::empty(h, w);
    for group in binned.chunk_by(|a, b| a.0 == b.0) {
        let (r, c) = group[0].0;
        let cx = cfg.x_range.0 + (r as f64 + 0.5) * cfg.cell_x;
        let cy = cfg.y_range.0 + (c as f64 + 0.5) * cfg.cell_y;
        let n = group.len() as f64;
        let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
        let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for (_, p) in group {
            sx += p[0] as f64;
            sy += p[1] as f64;
            let z = p[2] as f64;
            sz += z;
            zmin = zmin.min(z);
            zmax = zmax.max(z);
        }
        let features = [
            n.ln_1p(),
            (sx / n - cx) / cfg.cell_x,
            (sy / n - cy) / cfg.cell_y,
            sz / n,
            zmin,
            zmax,
        ]
        .map(|v| v as f32);
        grid.cells.insert(
            (r, c),
            Pillar {
                count: group.len() as u32,
                features,
            },
        );
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn single_point_lands_in_first_cell() {
        let cfg = PillarConfig::paper();
        let cloud = PointCloud::new(vec![[-9.6 + 0.075, -1.6 + 0.008, 1.0]]);
        let grid = pillarize(&cloud, &cfg).unwrap();
        assert_eq!(grid.len(), 1);
        let p = grid.cells[&(0, 0)];
        assert_eq!(p.count, 1);
        assert_eq!(p.features[0], 2f32.ln());
        // The point sits on the cell center up to f32 rounding of its coords.
        assert!(p.features[1].abs() < 1e-4 && p.features[2].abs() < 1e-4, "{p:?}");
        assert_eq!(&p.features[3..], &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn out_of_range_point_is_dropped() {
        let cloud = PointCloud::new(vec![[9.7, 0.0, 1.0]]);
        assert!(pillarize(&cloud, &PillarConfig::paper()).unwrap().is_empty());
    }

    #[test]
    fn upper_bound_is_exclusive() {
        let cloud = PointCloud::new(vec![[0.0, 9.6, 0.5], [4.8, 1.0, 0.5]]);
        assert!(pillarize(&cloud, &PillarConfig::desk()).unwrap().is_empty());
    }

    #[test]
    fn pgm_has_one_pixel_per_cell() {
        let cloud = PointCloud::new(vec![[0.0, 1.0, 0.5]]);
        let grid = pillarize(&cloud, &PillarConfig::desk()).unwrap();
        let pgm = grid.occupancy_pgm("");
        let header = b"P5\n64 64\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(pgm[header.len()..].iter().filter(|&&v| v != 0).count(), 1);
        assert_eq!(grid.occupancy_csv().lines().count(), 64);
        assert_eq!(grid.pillars_csv().lines().count(), 2);
        let tagged = grid.occupancy_pgm("seed=1");
        assert!(tagged.starts_with(b"P5\n# seed=1\n64 64\n255\n"));
        assert_eq!(tagged.len(), pgm.len() + "# seed=1\n".len());
    }

    fn cloud_strategy() -> impl Strategy<Value = Vec<[f32; 3]>> {
        prop::collection::vec(
            (-6.0f32..6.0, -1.0f32..11.0, -0.5f32..2.5).prop_map(|(x, y, z)| [x, y, z]),
            0..300,
        )
    }

    proptest! {
        #[test]
        fn counts_are_conserved(points in cloud_strategy()) {
            let cfg = PillarConfig::desk();
            let inside = points
                .iter()
                .filter(|p| {
                    in_range(p[0] as f64, cfg.x_range)
                        && in_range(p[1] as f64, cfg.y_range)
                        && in_range(p[2] as f64, cfg.z_range)
                })
                .count() as u64;
            let grid = pillarize(&PointCloud::new(points), &cfg).unwrap();
            prop_assert_eq!(grid.total_count(), inside);
            for &(r, c) in grid.cells.keys() {
                prop_assert!((r as usize) < grid.height && (c as usize) < grid.width);
            }
        }

        #[test]
        fn order_does_not_matter(points in cloud_strategy(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let cfg = PillarConfig::desk();
            let mut shuffled = points.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = pillarize(&PointCloud::new(points), &cfg).unwrap();
            let b = pillarize(&PointCloud::new(shuffled), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
