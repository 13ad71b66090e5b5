//! Shortest paths on an inflated occupancy grid.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::sim::World;

pub const GRID_RESOLUTION: f64 = 0.1;

/// Square cells over the arena; a cell is blocked when a robot disc at its
/// center would touch a wall or box. Pedestrians are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub origin: f64,
    pub resolution: f64,
    pub size: usize,
    pub blocked: Vec<bool>,
}

/// Path cost as counts of straight and diagonal moves. Lengths are
/// irrational combinations, so equal costs mean equal counts and the
/// comparison is exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Moves {
    pub straight: u32,
    pub diagonal: u32,
}

impl Moves {
    pub fn length(&self) -> f64 {
        self.straight as f64 + self.diagonal as f64 * SQRT_2
    }

    fn add(self, diagonal: bool) -> Self {
        if diagonal {
            Self {
                diagonal: self.diagonal + 1,
                ..self
            }
        } else {
            Self {
                straight: self.straight + 1,
                ..self
            }
        }
    }
}

impl OccupancyGrid {
    pub fn new(world: &World, radius: f64, resolution: f64) -> Self {
        let size = (2.0 * world.half_extent / resolution).ceil() as usize;
        let origin = -world.half_extent;
        let statics = World {
            pedestrians: Vec::new(),
            ..world.clone()
        };
        let mut blocked = vec![false; size * size];
        for r in 0..size {
            for c in 0..size {
                let p = [origin + (c as f64 + 0.5) * resolution, origin + (r as f64 + 0.5) * resolution];
                blocked[r * size + c] = statics.clearance(p, radius) < 0.0;
            }
        }
        Self {
            origin,
            resolution,
            size,
            blocked,
        }
    }

    /// `(row, col)` of the cell containing `p`.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let c = ((p[0] - self.origin) / self.resolution).floor();
        let r = ((p[1] - self.origin) / self.resolution).floor();
        let n = self.size as f64;
        (c >= 0.0 && r >= 0.0 && c < n && r < n).then_some((r as usize, c as usize))
    }

    pub fn center(&self, (r, c): (usize, usize)) -> [f64; 2] {
        [
            self.origin + (c as f64 + 0.5) * self.resolution,
            self.origin + (r as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn is_free(&self, (r, c): (usize, usize)) -> bool {
        !self.blocked[r * self.size + c]
    }

    /// 8-connected neighbors; a diagonal step needs both orthogonal
    /// neighbors free so paths never cut a blocked corner.
    pub fn neighbors(&self, (r, c): (usize, usize)) -> Vec<((usize, usize), bool)> {
        let n = self.size as isize;
        let mut out = Vec::with_capacity(8);
        for dr in -1isize..=1 {
            for dc in -1isize..=1 {
                if dr == 0 && dc == 0 {
                    continue;
                }
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= n || nc >= n {
                    continue;
                }
                let cell = (nr as usize, nc as usize);
                if !self.is_free(cell) {
                    continue;
                }
                let diagonal = dr != 0 && dc != 0;
                if diagonal && !(self.is_free((nr as usize, c)) && self.is_free((r, nc as usize))) {
                    continue;
                }
                out.push((cell, diagonal));
            }
        }
        out
    }
}

#[derive(PartialEq)]
struct Node {
    f: f64,
    g: Moves,
    cell: (usize, usize),
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.g.length().total_cmp(&self.g.length()).reverse())
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn octile(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dr = a.0.abs_diff(b.0) as f64;
    let dc = a.1.abs_diff(b.1) as f64;
    dr.max(dc) + (SQRT_2 - 1.0) * dr.min(dc)
}

/// A* with the octile heuristic; the optimal move counts between two
/// cells.
pub fn astar(grid: &OccupancyGrid, from: (usize, usize), to: (usize, usize)) -> Result<Moves> {
    if !grid.is_free(from) || !grid.is_free(to) {
        return Err(Error::NoPath);
    }
    let n = grid.size;
    let mut best: Vec<Option<Moves>> = vec![None; n * n];
    let mut closed = vec![false; n * n];
    let mut open = BinaryHeap::new();
    best[from.0 * n + from.1] = Some(Moves::default());
    open.push(Node {
        f: octile(from, to),
        g: Moves::default(),
        cell: from,
    });
    while let Some(Node { g, cell, .. }) = open.pop() {
        let i = cell.0 * n + cell.1;
        if closed[i] {
            continue;
        }
        closed[i] = true;
        if cell == to {
            return Ok(g);
        }
        for (next, diagonal) in grid.neighbors(cell) {
            let j = next.0 * n + next.1;
            if closed[j] {
                continue;
            }
            let cand = g.add(diagonal);
            if best[j].is_none_or(|b| cand.length() < b.length()) {
                best[j] = Some(cand);
                open.push(Node {
                    f: cand.length() + octile(next, to),
                    g: cand,
                    cell: next,
                });
            }
        }
    }
    Err(Error::NoPath)
}

/// Shortest collision-free length from `start` to `goal` for a disc of
/// `radius`: the straight hops to and from the nearest cell centers plus
/// the optimal grid path between them. Never shorter than the straight
/// line.
pub fn optimal_path_length(start: [f64; 2], goal: [f64; 2], world: &World, radius: f64) -> Result<f64> {
    let grid = OccupancyGrid::new(world, radius, GRID_RESOLUTION);
    path_length_on(&grid, start, goal)
}

pub fn path_length_on(grid: &OccupancyGrid, start: [f64; 2], goal: [f64; 2]) -> Result<f64> {
    let a = grid.cell_of(start).ok_or(Error::NoPath)?;
    let b = grid.cell_of(goal).ok_or(Error::NoPath)?;
    let moves = astar(grid, a, b)?;
    let hop = |p: [f64; 2], q: [f64; 2]| (p[0] - q[0]).hypot(p[1] - q[1]);
    Ok(hop(start, grid.center(a)) + moves.length() * grid.resolution + hop(grid.center(b), goal))
}
