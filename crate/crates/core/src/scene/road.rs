//! Manhattan-style directed road graph on a uniform lattice.
//!
//! Every lattice point is a vertex (a valid UE location). Streets run along
//! every `street_pitch`-th row and column; rows and columns alternate their
//! one-way direction. Vertices off the street network have no out-edges.
//! The graph is implicit: positions and adjacency are computed on demand,
//! which keeps a 200 m × 200 m scene at 10 cm spacing cheap.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Street {
    /// Row (y) or column (x) lattice index.
    pub index: usize,
    /// Lane runs toward increasing index along the street.
    pub forward: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadGraph {
    pub nx: usize,
    pub ny: usize,
    pub d_grid: f64,
    pub rows: Vec<Street>,
    pub cols: Vec<Street>,
}

impl RoadGraph {
    pub fn vertex_count(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn vertex(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, v: usize) -> (usize, usize) {
        (v % self.nx, v / self.nx)
    }

    pub fn position(&self, v: usize) -> [f64; 2] {
        let (i, j) = self.coords(v);
        [i as f64 * self.d_grid, j as f64 * self.d_grid]
    }

    fn row_street(&self, j: usize) -> Option<Street> {
        self.rows.iter().copied().find(|s| s.index == j)
    }

    fn col_street(&self, i: usize) -> Option<Street> {
        self.cols.iter().copied().find(|s| s.index == i)
    }

    pub fn is_intersection(&self, v: usize) -> bool {
        let (i, j) = self.coords(v);
        self.row_street(j).is_some() && self.col_street(i).is_some()
    }

    pub fn on_street(&self, v: usize) -> bool {
        let (i, j) = self.coords(v);
        self.row_street(j).is_some() || self.col_street(i).is_some()
    }

    /// Directed out-edges following lane directions.
    pub fn out_edges(&self, v: usize) -> Vec<usize> {
        let (i, j) = self.coords(v);
        let mut out = Vec::with_capacity(2);
        if let Some(s) = self.row_street(j) {
            if s.forward && i + 1 < self.nx {
                out.push(self.vertex(i + 1, j));
            } else if !s.forward && i > 0 {
                out.push(self.vertex(i - 1, j));
            }
        }
        if let Some(s) = self.col_street(i) {
            if s.forward && j + 1 < self.ny {
                out.push(self.vertex(i, j + 1));
            } else if !s.forward && j > 0 {
                out.push(self.vertex(i, j - 1));
            }
        }
        out
    }

    /// Street-adjacent vertices ignoring lane direction (pedestrian moves).
    pub fn street_neighbors(&self, v: usize) -> Vec<usize> {
        let (i, j) = self.coords(v);
        let mut out = Vec::with_capacity(4);
        if self.row_street(j).is_some() {
            if i + 1 < self.nx {
                out.push(self.vertex(i + 1, j));
            }
            if i > 0 {
                out.push(self.vertex(i - 1, j));
            }
        }
        if self.col_street(i).is_some() {
            if j + 1 < self.ny {
                out.push(self.vertex(i, j + 1));
            }
            if j > 0 {
                out.push(self.vertex(i, j - 1));
            }
        }
        out
    }

    /// Unit heading of the lattice edge `u → v`.
    pub fn lane_direction(&self, u: usize, v: usize) -> [f64; 2] {
        let (pu, pv) = (self.position(u), self.position(v));
        let d = [pv[0] - pu[0], pv[1] - pu[1]];
        let n = d[0].hypot(d[1]);
        [d[0] / n, d[1] / n]
    }

    /// All directed edges, in vertex order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.vertex_count()).flat_map(move |u| self.out_edges(u).into_iter().map(move |v| (u, v)))
    }
}

/// Build the lattice road graph for a scene of `extent` meters.
pub fn build_road_graph(
    extent: [f64; 2],
    d_grid: f64,
    street_pitch: usize,
    layout_seed: u64,
) -> Result<RoadGraph> {
    if !(d_grid > 0.0) || !d_grid.is_finite() {
        return Err(Error::invalid(format!("d_grid must be positive, got {d_grid}")));
    }
    if street_pitch == 0 {
        return Err(Error::invalid("street_pitch must be >= 1"));
    }
    if extent[0] < 2.0 * d_grid || extent[1] < 2.0 * d_grid {
        return Err(Error::ExtentTooSmall(format!(
            "{}x{} m with d_grid {} m",
            extent[0], extent[1], d_grid
        )));
    }
    let nx = (extent[0] / d_grid).round() as usize + 1;
    let ny = (extent[1] / d_grid).round() as usize + 1;

    let mut rng = rng::substream(layout_seed, "road-graph", 0);
    let mut lay = |n: usize| -> Vec<Street> {
        let offset = rng.random_range(0..street_pitch.min(n));
        let phase = rng.random::<bool>();
        (offset..n)
            .step_by(street_pitch)
            .enumerate()
            .map(|(k, index)| Street {
                index,
                forward: (k % 2 == 0) == phase,
            })
            .collect()
    };
    let rows = lay(ny);
    let cols = lay(nx);
    Ok(RoadGraph {
        nx,
        ny,
        d_grid,
        rows,
        cols,
    })
}
