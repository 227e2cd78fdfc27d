//! Projection of free points onto a mesh's vertex set: a differentiable
//! soft variant (temperature-weighted k nearest vertices) and the hard
//! nearest-vertex snap.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Vec3;

pub const DEFAULT_K: usize = 10;
pub const DEFAULT_TAU: f64 = 1.0;
/// Lower bound applied to the temperature during optimization.
pub const TAU_MIN: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionParams {
    pub k: usize,
    pub tau: f64,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams {
            k: DEFAULT_K,
            tau: DEFAULT_TAU,
        }
    }
}

impl ProjectionParams {
    pub fn validate(&self, vertex_count: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if vertex_count < self.k {
            return Err(Error::config(format!(
                "k = {} exceeds the {vertex_count} available vertices",
                self.k
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Exact k-nearest-vertex queries over a uniform grid.
#[derive(Clone, Debug)]
pub struct VertexGrid {
    vertices: Vec<Vec3>,
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    /// Start offsets into `items`, one per cell plus a sentinel.
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl VertexGrid {
    pub fn new(vertices: &[Vec3]) -> Self {
        let (lo, hi) = crate::character::mesh::bounding_box(vertices);
        let extent = (hi - lo).map(|e| e.max(1e-9));
        let n = vertices.len().max(1) as f64;
        // about two vertices per cell
        let mut cell = (extent.x * extent.y * extent.z * 2.0 / n).cbrt();
        let max_extent = extent.max();
        if !(cell > max_extent / 256.0) {
            cell = max_extent / 256.0;
        }
        let dims = [0, 1, 2].map(|k| ((extent[k] / cell).floor() as usize + 1).min(1024));
        let mut grid = VertexGrid {
            vertices: vertices.to_vec(),
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            items: Vec::new(),
        };
        let total = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; total + 1];
        let keys: Vec<usize> = vertices.iter().map(|v| grid.flat(grid.cell_of(v))).collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for i in 0..total {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0usize; vertices.len()];
        for (i, &k) in keys.iter().enumerate() {
            items[fill[k]] = i;
            fill[k] += 1;
        }
        grid.starts = counts;
        grid.items = items;
        grid
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|k| {
            let c = ((p[k] - self.origin[k]) / self.cell).floor();
            if c.is_nan() || c < 0.0 {
                0
            } else {
                (c as usize).min(self.dims[k] - 1)
            }
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    /// The `k` nearest vertices as `(index, squared distance)`, ordered by
    /// distance with ties broken by the lower index.
    pub fn knn(&self, p: &Vec3, k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.vertices.len());
        if k == 0 {
            return Vec::new();
        }
        let c = self.cell_of(p);
        let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        let max_r = self.dims.iter().copied().max().unwrap_or(1);
        let cmp = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        for r in 0..=max_r {
            let lo = [0, 1, 2].map(|a| c[a].saturating_sub(r));
            let hi = [0, 1, 2].map(|a| (c[a] + r).min(self.dims[a] - 1));
            for z in lo[2]..=hi[2] {
                for y in lo[1]..=hi[1] {
                    for x in lo[0]..=hi[0] {
                        let on_shell = [x, y, z]
                            .iter()
                            .zip(c)
                            .any(|(&v, cc)| v.abs_diff(cc) == r);
                        if !on_shell {
                            continue;
                        }
                        let f = self.flat([x, y, z]);
                        for &i in &self.items[self.starts[f]..self.starts[f + 1]] {
                            let d2 = (self.vertices[i] - p).norm_squared();
                            let cand = (i, d2);
                            if best.len() < k {
                                let pos = best.partition_point(|b| cmp(b, &cand).is_lt());
                                best.insert(pos, cand);
                            } else if cmp(&cand, &best[k - 1]).is_lt() {
                                let pos = best.partition_point(|b| cmp(b, &cand).is_lt());
                                best.insert(pos, cand);
                                best.pop();
                            }
                        }
                    }
                }
            }
            if best.len() == k {
                // distance from p to the outside of the searched block
                let mut bound = f64::INFINITY;
                for a in 0..3 {
                    if c[a] >= r + 1 {
                        let wall = self.origin[a] + (c[a] - r) as f64 * self.cell;
                        bound = bound.min(p[a] - wall);
                    }
                    if c[a] + r + 1 < self.dims[a] {
                        let wall = self.origin[a] + (c[a] + r + 1) as f64 * self.cell;
                        bound = bound.min(wall - p[a]);
                    }
                }
                if bound.is_infinite() || (bound > 0.0 && best[k - 1].1 < bound * bound) {
                    break;
                }
            }
        }
        best
    }

    /// Nearest vertex (lowest index on ties).
    pub fn nearest(&self, p: &Vec3) -> (usize, f64) {
        self.knn(p, 1)[0]
    }
}

/// Intermediate values of a soft projection, kept for differentiation.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPoint {
    pub input: Vec3,
    pub neighbors: Vec<usize>,
    pub dist2: Vec<f64>,
    pub weights: Vec<f64>,
    pub output: Vec3,
}

impl SoftPoint {
    /// Pull back the gradient `g_out` of the output to the input point and
    /// the temperature.
    pub fn backward(&self, vertices: &[Vec3], tau: f64, g_out: &Vec3) -> (Vec3, f64) {
        let inv_t2 = 1.0 / (tau * tau);
        let mut g_in = Vec3::zeros();
        let mut g_tau = 0.0;
        for ((&v, &d2), &w) in self.neighbors.iter().zip(&self.dist2).zip(&self.weights) {
            let vl = vertices[v];
            let gs = w * g_out.dot(&(vl - self.output));
            g_in -= (self.input - vl) * (2.0 * inv_t2 * gs);
            g_tau += gs * 2.0 * d2 * inv_t2 / tau;
        }
        (g_in, g_tau)
    }
}

/// Soft projection of one point given its neighbor list.
pub fn soft_point(vertices: &[Vec3], input: Vec3, knn: &[(usize, f64)], tau: f64) -> SoftPoint {
    let d_min = knn.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let inv_t2 = 1.0 / (tau * tau);
    let mut weights: Vec<f64> = knn.iter().map(|&(_, d2)| (-(d2 - d_min) * inv_t2).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let output = knn
        .iter()
        .zip(&weights)
        .map(|(&(v, _), &w)| vertices[v] * w)
        .sum();
    SoftPoint {
        input,
        neighbors: knn.iter().map(|x| x.0).collect(),
        dist2: knn.iter().map(|x| x.1).collect(),
        weights,
        output,
    }
}

/// Reusable projector onto a fixed vertex set.
#[derive(Clone, Debug)]
pub struct Projector {
    grid: VertexGrid,
}

impl Projector {
    pub fn new(vertices: &[Vec3]) -> Self {
        Projector {
            grid: VertexGrid::new(vertices),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        self.grid.vertices()
    }

    pub fn grid(&self) -> &VertexGrid {
        &self.grid
    }

    pub fn soft(&self, points: &[Vec3], params: &ProjectionParams) -> Result<Vec<SoftPoint>> {
        params.validate(self.vertices().len())?;
        check_finite(points)?;
        Ok(points
            .par_iter()
            .map(|p| soft_point(self.vertices(), *p, &self.grid.knn(p, params.k), params.tau))
            .collect())
    }

    pub fn hard(&self, points: &[Vec3]) -> Result<(Vec<Vec3>, Vec<usize>)> {
        if self.vertices().is_empty() {
            return Err(Error::config("cannot project onto an empty vertex set"));
        }
        check_finite(points)?;
        Ok(points
            .par_iter()
            .map(|p| {
                let (i, _) = self.grid.nearest(p);
                (self.vertices()[i], i)
            })
            .unzip())
    }
}

fn check_finite(points: &[Vec3]) -> Result<()> {
    match points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
        Some(i) => Err(Error::validation(format!("point {i} is not finite"))),
        None => Ok(()),
    }
}

/// Temperature-weighted convex combination of each point's `k` nearest vertices.
pub fn soft_project(points: &[Vec3], vertices: &[Vec3], params: &ProjectionParams) -> Result<Vec<Vec3>> {
    Ok(Projector::new(vertices)
        .soft(points, params)?
        .into_iter()
        .map(|s| s.output)
        .collect())
}

/// Snap each point to its nearest vertex, returning positions and indices.
pub fn hard_project(points: &[Vec3], vertices: &[Vec3]) -> Result<(Vec<Vec3>, Vec<usize>)> {
    Projector::new(vertices).hard(points)
}
