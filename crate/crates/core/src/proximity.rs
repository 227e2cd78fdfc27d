//! Pairwise proximity tables over deformed anchors.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::anchors::DeformedAnchors;
use crate::error::{Error, Result};
use crate::math::{orthonormality_error, Mat3, Vec3};

/// Default decay rate of the interaction weights.
pub const DEFAULT_ALPHA: f64 = 5.0;
/// Lower and upper weight thresholds as fractions of character height.
pub const D_MIN_FRACTION: f64 = 0.05;
pub const D_MAX_FRACTION: f64 = 0.15;

/// Dense row-major `n x n` table.
#[derive(Clone, Debug, PartialEq)]
pub struct PairTable<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Copy + Send + Sync> PairTable<T> {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> T + Sync) -> Self {
        let data = (0..n * n).into_par_iter().map(|k| f(k / n, k % n)).collect();
        PairTable { n, data }
    }

    pub fn from_vec(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::structural(format!("{} entries for a {n}x{n} table", data.len())));
        }
        Ok(PairTable { n, data })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn map<U: Copy + Send + Sync>(&self, f: impl Fn(T) -> U + Sync) -> PairTable<U> {
        PairTable {
            n: self.n,
            data: self.data.par_iter().map(|&x| f(x)).collect(),
        }
    }
}

/// `D(i, j) = |A_j - A_i|`.
pub fn distance_matrix(positions: &[Vec3]) -> PairTable<f64> {
    PairTable::from_fn(positions.len(), |i, j| (positions[j] - positions[i]).norm())
}

/// `D_dir(i, j) = T_i^T (A_j - A_i)`, the offset to `j` in the tangent frame of `i`.
pub fn direction_matrix(positions: &[Vec3], frames: &[Mat3]) -> Result<PairTable<Vec3>> {
    if positions.len() != frames.len() {
        return Err(Error::structural("positions and frames differ in count"));
    }
    for (i, f) in frames.iter().enumerate() {
        let e = orthonormality_error(f);
        if e > 1e-5 {
            return Err(Error::validation(format!("frame {i} is not orthonormal (error {e:.3e})")));
        }
    }
    let tr: Vec<Mat3> = frames.iter().map(|f| f.transpose()).collect();
    Ok(PairTable::from_fn(positions.len(), |i, j| tr[i] * (positions[j] - positions[i])))
}

/// Interaction weights and their thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightParams {
    pub alpha: f64,
    pub d_min: f64,
    pub d_max: f64,
}

impl WeightParams {
    pub fn new(alpha: f64, d_min: f64, d_max: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::config(format!("decay rate must be positive, got {alpha}")));
        }
        if !(d_min >= 0.0) || !(d_max > d_min) || !d_max.is_finite() {
            return Err(Error::config(format!(
                "weight thresholds need 0 <= d_min < d_max, got {d_min} and {d_max}"
            )));
        }
        Ok(WeightParams { alpha, d_min, d_max })
    }

    /// Thresholds at 5% and 15% of `height`.
    pub fn for_height(height: f64, alpha: f64) -> Result<Self> {
        WeightParams::new(alpha, D_MIN_FRACTION * height, D_MAX_FRACTION * height)
    }

    #[inline]
    pub fn weight(&self, d: f64) -> f64 {
        (-self.alpha * (d - self.d_min).max(0.0) / (self.d_max - self.d_min)).exp()
    }
}

/// `W(i, j) = exp(-alpha * max(D(i, j) - d_min, 0) / (d_max - d_min))`.
pub fn weight_matrix(dist: &PairTable<f64>, params: &WeightParams) -> PairTable<f64> {
    dist.map(|d| params.weight(d))
}

/// `D_ord(i, j) = n_i . (A_j - A_i)`; negative when `j` lies behind the
/// tangent plane at `i`.
pub fn ordering_matrix(positions: &[Vec3], normals: &[Vec3]) -> Result<PairTable<f64>> {
    if positions.len() != normals.len() {
        return Err(Error::structural("positions and normals differ in count"));
    }
    for (i, n) in normals.iter().enumerate() {
        if (n.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::validation(format!("normal {i} is not unit length")));
        }
    }
    Ok(PairTable::from_fn(positions.len(), |i, j| normals[i].dot(&(positions[j] - positions[i]))))
}

/// Pairs of anchors on different body parts.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMask {
    table: PairTable<bool>,
    count: usize,
}

impl PairMask {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.table.get(i, j)
    }

    /// Number of ordered pairs `(i, j)` in the mask.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn size(&self) -> usize {
        self.table.size()
    }

    /// Masked ordered pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.size();
        self.table
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(k, _)| (k / n, k % n))
    }
}

/// `M(i, j)` is true iff anchors `i` and `j` carry different part labels.
pub fn body_part_mask(parts: &[usize]) -> PairMask {
    let table = PairTable::from_fn(parts.len(), |i, j| parts[i] != parts[j]);
    let count = table.as_slice().iter().filter(|&&m| m).count();
    PairMask { table, count }
}

/// Elementwise `sign(x) * ln(1 + |x| + eps)` with `sign(0) = 0`.
pub fn signed_log(x: f64, eps: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * (1.0 + x.abs() + eps).ln()
    }
}

/// Inverse of [`signed_log`] on its range.
pub fn signed_log_inverse(y: f64, eps: f64) -> f64 {
    if y == 0.0 {
        0.0
    } else {
        y.signum() * (y.abs().exp() - 1.0 - eps).max(0.0)
    }
}

pub fn signed_log_transform(dir: &PairTable<Vec3>, eps: f64) -> PairTable<Vec3> {
    dir.map(|v| v.map(|x| signed_log(x, eps)))
}

pub fn signed_log_inverse_transform(dir: &PairTable<Vec3>, eps: f64) -> PairTable<Vec3> {
    dir.map(|v| v.map(|x| signed_log_inverse(x, eps)))
}

/// All proximity tables of one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ProximityTables {
    pub dist: PairTable<f64>,
    pub dir: PairTable<Vec3>,
    pub weight: PairTable<f64>,
    pub ord: PairTable<f64>,
    pub params: WeightParams,
}

impl ProximityTables {
    pub fn compute(anchors: &DeformedAnchors, params: &WeightParams) -> Result<Self> {
        let dist = distance_matrix(&anchors.positions);
        let dir = direction_matrix(&anchors.positions, &anchors.frames)?;
        let weight = weight_matrix(&dist, params);
        let ord = ordering_matrix(&anchors.positions, &anchors.normals())?;
        Ok(ProximityTables {
            dist,
            dir,
            weight,
            ord,
            params: *params,
        })
    }

    pub fn size(&self) -> usize {
        self.dist.size()
    }

    /// Write the tables as a one-line JSON header followed by little-endian
    /// `f64` data: distance, direction (3 per entry), weight, ordering, each
    /// row-major.
    pub fn dump(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Header<'a> {
            anchors: usize,
            tables: [&'a str; 4],
            components: [usize; 4],
            params: WeightParams,
        }
        let header = Header {
            anchors: self.size(),
            tables: ["distance", "direction", "weight", "ordering"],
            components: [1, 3, 1, 1],
            params: self.params,
        };
        let mut buf = serde_json::to_vec(&header).expect("header serializes");
        buf.push(b'\n');
        let mut put = |x: f64| buf.extend_from_slice(&x.to_le_bytes());
        self.dist.as_slice().iter().for_each(|&x| put(x));
        self.dir.as_slice().iter().for_each(|v| v.iter().for_each(|&x| put(x)));
        self.weight.as_slice().iter().for_each(|&x| put(x));
        self.ord.as_slice().iter().for_each(|&x| put(x));
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&buf).map_err(|e| Error::io(path, e))
    }
}
