use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::traj::Trajectory;

use super::geometry::{IntersectionGeometry, ENDPOINT_NAMES};

/// Share of the regional maximum a cell needs to join the peak cluster.
const CLUSTER_FRACTION: f64 = 0.9;

/// Per-cell visit counts; a trajectory counts at most once per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub cell_size: f64,
    pub origin: Point,
    pub nx: usize,
    pub ny: usize,
    counts: Vec<u32>,
}

impl DensityGrid {
    pub fn build(trajs: &[&Trajectory], cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(Error::InvalidInput(format!("cell size must be positive, got {cell_size}")));
        }
        let mut min = Point::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in trajs.iter().flat_map(|t| t.valid_points()) {
            min = Point::new(min.x.min(p.x), min.y.min(p.y));
            max = Point::new(max.x.max(p.x), max.y.max(p.y));
        }
        if !min.is_finite() {
            return Err(Error::Empty("pedestrian trajectories"));
        }
        let nx = ((max.x - min.x) / cell_size).floor() as usize + 1;
        let ny = ((max.y - min.y) / cell_size).floor() as usize + 1;
        let mut grid = DensityGrid {
            cell_size,
            origin: min,
            nx,
            ny,
            counts: vec![0; nx * ny],
        };
        let mut cells = Vec::new();
        for t in trajs {
            cells.clear();
            cells.extend(t.valid_points().map(|p| grid.cell_index(p.pos())));
            cells.sort_unstable();
            cells.dedup();
            for &c in &cells {
                grid.counts[c] += 1;
            }
        }
        Ok(grid)
    }

    fn cell_index(&self, p: Point) -> usize {
        let ix = (((p.x - self.origin.x) / self.cell_size).floor().max(0.0) as usize).min(self.nx - 1);
        let iy = (((p.y - self.origin.y) / self.cell_size).floor().max(0.0) as usize).min(self.ny - 1);
        iy * self.nx + ix
    }

    pub fn count(&self, ix: usize, iy: usize) -> u32 {
        self.counts[iy * self.nx + ix]
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Point {
        Point::new(
            self.origin.x + (ix as f64 + 0.5) * self.cell_size,
            self.origin.y + (iy as f64 + 0.5) * self.cell_size,
        )
    }

    /// Delimited dump: one row per cell with its center, raw count and
    /// `ln(1 + count)`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("ix,iy,x,y,count,log_count\n");
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let c = self.count(ix, iy);
                let p = self.cell_center(ix, iy);
                out.push_str(&format!("{ix},{iy},{},{},{c},{}\n", p.x, p.y, (c as f64).ln_1p()));
            }
        }
        out
    }
}

/// Axis-aligned operator-supplied box, `[xmin, ymin, xmax, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct SearchBox {
    pub min: Point,
    pub max: Point,
}

impl From<[f64; 4]> for SearchBox {
    fn from(v: [f64; 4]) -> Self {
        SearchBox {
            min: Point::new(v[0].min(v[2]), v[1].min(v[3])),
            max: Point::new(v[0].max(v[2]), v[1].max(v[3])),
        }
    }
}

impl From<SearchBox> for [f64; 4] {
    fn from(b: SearchBox) -> Self {
        [b.min.x, b.min.y, b.max.x, b.max.y]
    }
}

impl SearchBox {
    pub fn around(center: Point, half: f64) -> Self {
        SearchBox {
            min: Point::new(center.x - half, center.y - half),
            max: Point::new(center.x + half, center.y + half),
        }
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Count-weighted centroid of the densest cell cluster inside `region`.
///
/// The cluster is the 4-connected flood fill, restricted to the region, of
/// cells holding at least 90% of the regional maximum, seeded at the first
/// maximal cell in row-major order.
pub fn estimate_endpoint(grid: &DensityGrid, region: &SearchBox) -> Result<Point> {
    let inside = |ix: usize, iy: usize| region.contains(grid.cell_center(ix, iy));
    let mut best: Option<(usize, usize, u32)> = None;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let c = grid.count(ix, iy);
            if c > 0 && inside(ix, iy) && best.is_none_or(|(_, _, b)| c > b) {
                best = Some((ix, iy, c));
            }
        }
    }
    let (sx, sy, peak) = best.ok_or_else(|| {
        Error::InvalidInput(format!(
            "search region [{}, {}, {}, {}] contains no visited cells",
            region.min.x, region.min.y, region.max.x, region.max.y
        ))
    })?;
    let floor = CLUSTER_FRACTION * peak as f64;
    let mut seen = vec![false; grid.nx * grid.ny];
    let mut queue = VecDeque::from([(sx, sy)]);
    seen[sy * grid.nx + sx] = true;
    let (mut wx, mut wy, mut wsum) = (0.0, 0.0, 0.0);
    while let Some((ix, iy)) = queue.pop_front() {
        let c = grid.count(ix, iy) as f64;
        let p = grid.cell_center(ix, iy);
        wx += c * p.x;
        wy += c * p.y;
        wsum += c;
        let mut neighbors = Vec::with_capacity(4);
        if ix > 0 {
            neighbors.push((ix - 1, iy));
        }
        if ix + 1 < grid.nx {
            neighbors.push((ix + 1, iy));
        }
        if iy > 0 {
            neighbors.push((ix, iy - 1));
        }
        if iy + 1 < grid.ny {
            neighbors.push((ix, iy + 1));
        }
        for (nx, ny) in neighbors {
            let k = ny * grid.nx + nx;
            if !seen[k] && inside(nx, ny) && grid.count(nx, ny) as f64 >= floor {
                seen[k] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    Ok(Point::new(wx / wsum, wy / wsum))
}

/// Estimates all eight crosswalk endpoints from pedestrian traffic density and
/// builds the quadrant geometry from them. `regions` follow
/// [`ENDPOINT_NAMES`] order.
pub fn estimate_crosswalk_endpoints(
    pedestrians: &[&Trajectory],
    cell_size: f64,
    regions: &[SearchBox; 8],
) -> Result<(IntersectionGeometry, DensityGrid)> {
    if pedestrians.is_empty() {
        return Err(Error::Empty("pedestrian trajectories"));
    }
    let grid = DensityGrid::build(pedestrians, cell_size)?;
    let mut endpoints = [Point::default(); 8];
    for (i, region) in regions.iter().enumerate() {
        endpoints[i] = estimate_endpoint(&grid, region).map_err(|e| match e {
            Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", ENDPOINT_NAMES[i])),
            other => other,
        })?;
    }
    Ok((IntersectionGeometry::from_endpoints(endpoints)?, grid))
}
