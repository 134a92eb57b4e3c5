//! Height-filtered 2D occupancy grid and obstacle inflation.

use std::io::{self, Write};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Free,
    Occupied,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    /// Map-frame coordinates of the lower-left corner of cell (0, 0).
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Cell>,
}

impl OccupancyGrid {
    pub fn new(origin: [f64; 2], width: usize, height: usize, resolution: f64) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self { resolution, origin, width, height, cells: vec![Cell::Unknown; width * height] }
    }

    /// Grid covering the rectangle `[x0, x1] × [y0, y1]`.
    pub fn covering(x0: f64, y0: f64, x1: f64, y1: f64, resolution: f64) -> Self {
        let w = ((x1 - x0) / resolution).ceil().max(1.0) as usize;
        let h = ((y1 - y0) / resolution).ceil().max(1.0) as usize;
        Self::new([x0, y0], w, h, resolution)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let i = ((x - self.origin[0]) / self.resolution).floor();
        let j = ((y - self.origin[1]) / self.resolution).floor();
        if i < 0.0 || j < 0.0 || i >= self.width as f64 || j >= self.height as f64 {
            return None;
        }
        Some((i as usize, j as usize))
    }

    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        (
            self.origin[0] + (i as f64 + 0.5) * self.resolution,
            self.origin[1] + (j as f64 + 0.5) * self.resolution,
        )
    }

    pub fn get(&self, i: usize, j: usize) -> Cell {
        self.cells[j * self.width + i]
    }

    pub fn set(&mut self, i: usize, j: usize, c: Cell) {
        self.cells[j * self.width + i] = c;
    }

    pub fn at(&self, x: f64, y: f64) -> Option<Cell> {
        self.cell_of(x, y).map(|(i, j)| self.get(i, j))
    }

    /// Marks cells hit by in-band points occupied and cells with only
    /// out-of-band points free. Occupied cells stay occupied.
    pub fn insert_points(&mut self, points: &[Point3<f64>], z_low: f64, z_high: f64) {
        for p in points {
            let Some((i, j)) = self.cell_of(p.x, p.y) else { continue };
            if p.z >= z_low && p.z <= z_high {
                self.set(i, j, Cell::Occupied);
            } else if self.get(i, j) == Cell::Unknown {
                self.set(i, j, Cell::Free);
            }
        }
    }

    pub fn occupied_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.height {
            for i in 0..self.width {
                if self.get(i, j) == Cell::Occupied {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Blocked mask: cells whose center lies within `radius` of an occupied
    /// cell center. Unknown space counts as traversable.
    pub fn inflate(&self, radius: f64) -> Vec<bool> {
        let mut mask = vec![false; self.width * self.height];
        let r = (radius / self.resolution).ceil() as isize;
        let r2 = (radius / self.resolution).powi(2);
        for (i, j) in self.occupied_cells() {
            for dj in -r..=r {
                for di in -r..=r {
                    if (di * di + dj * dj) as f64 > r2 + 1e-9 {
                        continue;
                    }
                    let (ii, jj) = (i as isize + di, j as isize + dj);
                    if ii >= 0 && jj >= 0 && (ii as usize) < self.width && (jj as usize) < self.height {
                        mask[jj as usize * self.width + ii as usize] = true;
                    }
                }
            }
        }
        mask
    }

    /// Binary PGM: free 255, occupied 0, unknown 128. Top row is max y.
    pub fn write_pgm<W: Write>(&self, out: &mut W) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.cells.len());
        for j in (0..self.height).rev() {
            for i in 0..self.width {
                buf.push(match self.get(i, j) {
                    Cell::Free => 255u8,
                    Cell::Occupied => 0,
                    Cell::Unknown => 128,
                });
            }
        }
        out.write_all(&buf)
    }
}

/// Grid sized to the points' planar bounding box (one cell margin).
pub fn build_costmap(points: &[Point3<f64>], z_low: f64, z_high: f64, resolution: f64) -> OccupancyGrid {
    debug_assert!(z_low < z_high);
    if points.is_empty() {
        return OccupancyGrid::new([0.0, 0.0], 1, 1, resolution);
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let snap = |v: f64| (v / resolution).floor() * resolution;
    let mut g = OccupancyGrid::covering(snap(x0) - resolution, snap(y0) - resolution, snap(x1) + 2.0 * resolution, snap(y1) + 2.0 * resolution, resolution);
    g.insert_points(points, z_low, z_high);
    g
}
