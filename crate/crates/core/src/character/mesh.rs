use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Minimum triangle area accepted by [`Mesh::new`].
pub const MIN_FACE_AREA: f64 = 1e-12;

/// Triangle mesh in the rest pose.
#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Mesh { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if let Some(i) = self.vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::validation(format!("vertex {i} is not finite")));
        }
        for (f, face) in self.faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&i| i >= n) {
                return Err(Error::validation(format!(
                    "face {f} references vertex {bad} but the mesh has {n} vertices"
                )));
            }
            let area = self.face_area(f);
            if !(area > MIN_FACE_AREA) {
                return Err(Error::validation(format!("face {f} is degenerate (area {area:e})")));
            }
        }
        Ok(())
    }

    pub fn face_vertices(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.face_vertices(f);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unit normal following the face winding.
    pub fn face_normal(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.face_vertices(f);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Area-weighted vertex normals. Vertices touching no face get +y.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.vertices.len()];
        for face in &self.faces {
            let [a, b, c] = face.map(|i| self.vertices[i]);
            let n = (b - a).cross(&(c - a));
            for &i in face {
                acc[i] += n;
            }
        }
        acc.into_iter()
            .map(|n| {
                let len = n.norm();
                if len > 0.0 {
                    n / len
                } else {
                    Vec3::y()
                }
            })
            .collect()
    }

    /// Vertical extent of the mesh (max y - min y).
    pub fn height(&self) -> f64 {
        let (lo, hi) = self
            .vertices
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.y), hi.max(v.y)));
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    }

    /// Undirected edge -> number of incident faces.
    pub fn edge_valence(&self) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for face in &self.faces {
            for k in 0..3 {
                let (a, b) = (face[k], face[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    /// Every edge must be shared by exactly two faces.
    pub fn check_watertight(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::validation("mesh has no faces"));
        }
        let mut bad: Vec<_> = self
            .edge_valence()
            .into_iter()
            .filter(|&(_, count)| count != 2)
            .collect();
        if bad.is_empty() {
            Ok(())
        } else {
            bad.sort();
            let ((a, b), count) = bad[0];
            Err(Error::validation(format!(
                "mesh is not watertight: {} edges with valence != 2 (e.g. edge ({a},{b}) has {count})",
                bad.len()
            )))
        }
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        bounding_box(&self.vertices)
    }
}

pub(crate) fn bounding_box(points: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}
