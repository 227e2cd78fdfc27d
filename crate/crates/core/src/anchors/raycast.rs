//! Watertight ray-triangle intersection and a bounding-volume hierarchy over
//! a triangle soup.

use crate::math::Vec3;

/// A ray-triangle intersection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: usize,
    /// Barycentric weights of the face's three vertices.
    pub bary: [f64; 3],
    /// The ray crossed an edge or vertex of the triangle.
    pub on_boundary: bool,
}

/// Watertight ray/triangle test (shear-and-scale formulation). Rays through
/// shared edges or vertices report a hit on every incident triangle, so a
/// closed surface can never be slipped through.
pub fn intersect_triangle(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3], t_min: f64) -> Option<(f64, [f64; 3], bool)> {
    let kz = dir.iamax();
    let mut kx = (kz + 1) % 3;
    let mut ky = (kx + 1) % 3;
    if dir[kz] < 0.0 {
        std::mem::swap(&mut kx, &mut ky);
    }
    let sx = dir[kx] / dir[kz];
    let sy = dir[ky] / dir[kz];
    let sz = 1.0 / dir[kz];

    let a = tri[0] - origin;
    let b = tri[1] - origin;
    let c = tri[2] - origin;
    let (ax, ay) = (a[kx] - sx * a[kz], a[ky] - sy * a[kz]);
    let (bx, by) = (b[kx] - sx * b[kz], b[ky] - sy * b[kz]);
    let (cx, cy) = (c[kx] - sx * c[kz], c[ky] - sy * c[kz]);

    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;
    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let t_scaled = u * (sz * a[kz]) + v * (sz * b[kz]) + w * (sz * c[kz]);
    let t = t_scaled / det;
    if !(t > t_min) || !t.is_finite() {
        return None;
    }
    let on_boundary = u == 0.0 || v == 0.0 || w == 0.0;
    Some((t, [u / det, v / det, w / det], on_boundary))
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    lo: Vec3,
    hi: Vec3,
}

impl Aabb {
    fn empty() -> Self {
        Aabb {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vec3) {
        self.lo = self.lo.inf(p);
        self.hi = self.hi.sup(p);
    }

    fn merge(&mut self, o: &Aabb) {
        self.lo = self.lo.inf(&o.lo);
        self.hi = self.hi.sup(&o.hi);
    }

    /// Entry distance of the ray into the box, if it enters before `t_max`.
    fn entry(&self, origin: &Vec3, inv_dir: &Vec3, t_max: f64) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = t_max;
        for k in 0..3 {
            if inv_dir[k].is_infinite() {
                if origin[k] < self.lo[k] || origin[k] > self.hi[k] {
                    return None;
                }
                continue;
            }
            let mut a = (self.lo[k] - origin[k]) * inv_dir[k];
            let mut b = (self.hi[k] - origin[k]) * inv_dir[k];
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            t0 = t0.max(a);
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        if t1 < 0.0 {
            return None;
        }
        Some(t0)
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

const LEAF_SIZE: usize = 4;

/// Median-split BVH over the triangles of a mesh.
#[derive(Clone, Debug)]
pub struct Bvh {
    triangles: Vec<[Vec3; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl Bvh {
    pub fn new(vertices: &[Vec3], faces: &[[usize; 3]]) -> Self {
        let triangles: Vec<[Vec3; 3]> = faces
            .iter()
            .map(|f| [vertices[f[0]], vertices[f[1]], vertices[f[2]]])
            .collect();
        let mut bvh = Bvh {
            order: (0..triangles.len()).collect(),
            triangles,
            nodes: Vec::new(),
        };
        if !bvh.triangles.is_empty() {
            let centroids: Vec<Vec3> = bvh
                .triangles
                .iter()
                .map(|t| (t[0] + t[1] + t[2]) / 3.0)
                .collect();
            bvh.build(&centroids, 0, bvh.triangles.len());
        }
        bvh
    }

    fn build(&mut self, centroids: &[Vec3], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &i in &self.order[start..end] {
            for p in &self.triangles[i] {
                bounds.grow(p);
            }
            cbounds.grow(&centroids[i]);
        }
        // pad so that hits exactly on a box face are never culled
        let pad = Vec3::repeat(1e-9 * (1.0 + bounds.hi.abs().max().max(bounds.lo.abs().max())));
        bounds.lo -= pad;
        bounds.hi += pad;

        let idx = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return idx;
        }
        let axis = (cbounds.hi - cbounds.lo).iamax();
        let mid = (start + end) / 2;
        self.order[start..end].sort_by(|&a, &b| {
            centroids[a][axis]
                .total_cmp(&centroids[b][axis])
                .then(a.cmp(&b))
        });
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.build(centroids, start, mid);
        let right = self.build(centroids, mid, end);
        let mut merged = *self.nodes[left].bounds();
        merged.merge(self.nodes[right].bounds());
        self.nodes[idx] = Node::Inner {
            bounds: merged,
            left,
            right,
        };
        idx
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    /// Nearest hit with `t > t_min`; ties in `t` resolve to the lowest face index.
    pub fn closest_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let t_max = best.map_or(f64::INFINITY, |h| h.t);
            if self.nodes[n].bounds().entry(origin, &inv, t_max).is_none() {
                continue;
            }
            match &self.nodes[n] {
                Node::Leaf { start, end, .. } => {
                    for &face in &self.order[*start..*end] {
                        if let Some((t, bary, on_boundary)) =
                            intersect_triangle(origin, dir, &self.triangles[face], t_min)
                        {
                            let better = match best {
                                None => true,
                                Some(b) => t < b.t || (t == b.t && face < b.face),
                            };
                            if better {
                                best = Some(Hit {
                                    t,
                                    face,
                                    bary,
                                    on_boundary,
                                });
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best
    }

    /// Every hit with `t > t_min`, sorted by `(t, face)`.
    pub fn all_hits(&self, origin: &Vec3, dir: &Vec3, t_min: f64) -> Vec<Hit> {
        let mut hits = Vec::new();
        if self.nodes.is_empty() {
            return hits;
        }
        let inv = dir.map(|d| 1.0 / d);
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            if self.nodes[n].bounds().entry(origin, &inv, f64::INFINITY).is_none() {
                continue;
            }
            match &self.nodes[n] {
                Node::Leaf { start, end, .. } => {
                    for &face in &self.order[*start..*end] {
                        if let Some((t, bary, on_boundary)) =
                            intersect_triangle(origin, dir, &self.triangles[face], t_min)
                        {
                            hits.push(Hit {
                                t,
                                face,
                                bary,
                                on_boundary,
                            });
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        hits.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.face.cmp(&b.face)));
        hits
    }
}
