//! Penetration and contact metrics over deformed character sequences.
//!
//! Vertices are partitioned into body parts through their dominant skin
//! joint. Each part's faces form a sub-mesh whose open boundaries are capped
//! with fans around the loop centroid, so inside/outside tests work on
//! closed surfaces.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchors::raycast::Bvh;
use crate::character::{forward_kinematics, linear_blend_skinning, Character, Mesh, Pose};
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Contact threshold as a fraction of character height.
pub const DEFAULT_CONTACT_FRACTION: f64 = 0.01;

/// Maximum number of body parts (part sets are stored as bit masks).
pub const MAX_PARTS: usize = 128;

const RAY_DIRECTIONS: [[f64; 3]; 8] = [
    [0.5773502691896258, 0.6123724356957945, 0.5400617248673217],
    [-0.3711, 0.8224, 0.4312],
    [0.7071, -0.1736, -0.6853],
    [-0.6124, -0.5423, 0.5750],
    [0.1045, 0.2419, -0.9647],
    [0.9063, 0.3090, 0.2880],
    [-0.2588, -0.9397, -0.2233],
    [0.4226, -0.6018, 0.6773],
];

fn parity(bvh: &Bvh, p: &Vec3) -> bool {
    let mut inside = false;
    for d in RAY_DIRECTIONS {
        let dir = Vec3::from(d).normalize();
        let hits = bvh.all_hits(p, &dir, 0.0);
        inside = hits.len() % 2 == 1;
        if !hits.iter().any(|h| h.on_boundary) {
            break;
        }
    }
    inside
}

/// Ray-parity inside test against a watertight mesh.
///
/// ```
/// use anchor_retarget::character::Mesh;
/// use anchor_retarget::evaluation::point_in_mesh;
/// use anchor_retarget::math::Vec3;
///
/// let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z);
/// let tetra = Mesh::new(
///     vec![v(0.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(0.0, 0.0, 1.0)],
///     vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
/// )
/// .unwrap();
/// assert!(point_in_mesh(&v(0.1, 0.1, 0.1), &tetra).unwrap());
/// assert!(!point_in_mesh(&v(1.0, 1.0, 1.0), &tetra).unwrap());
/// ```
pub fn point_in_mesh(point: &Vec3, mesh: &Mesh) -> Result<bool> {
    mesh.check_watertight()?;
    let bvh = Bvh::new(&mesh.vertices, &mesh.faces);
    Ok(parity(&bvh, point))
}

/// Linear scan variant of [`point_in_mesh`] without the watertightness check.
#[cfg(test)]
pub(crate) fn point_in_triangles(point: &Vec3, triangles: &[[Vec3; 3]]) -> bool {
    let mut inside = false;
    for d in RAY_DIRECTIONS {
        let dir = Vec3::from(d).normalize();
        let mut count = 0;
        let mut grazed = false;
        for tri in triangles {
            if let Some((_, _, boundary)) = crate::anchors::raycast::intersect_triangle(point, &dir, tri, 0.0) {
                count += 1;
                grazed |= boundary;
            }
        }
        inside = count % 2 == 1;
        if !grazed {
            break;
        }
    }
    inside
}

/// One capped body-part surface, indexed into the full vertex array plus
/// one centroid vertex per boundary loop.
#[derive(Clone, Debug)]
struct SubMesh {
    vertices: Vec<usize>,
    loops: Vec<Vec<usize>>,
    /// Local indices: `< vertices.len()` are mesh vertices, the rest are
    /// loop centroids.
    faces: Vec<[usize; 3]>,
}

impl SubMesh {
    fn build(mesh: &Mesh, faces: &[usize]) -> Result<Self> {
        let mut local: BTreeMap<usize, usize> = BTreeMap::new();
        for &f in faces {
            for &v in &mesh.faces[f] {
                let next = local.len();
                local.entry(v).or_insert(next);
            }
        }
        let mut vertices = vec![0; local.len()];
        for (&g, &l) in &local {
            vertices[l] = g;
        }
        let mut tris: Vec<[usize; 3]> = faces.iter().map(|&f| mesh.faces[f].map(|v| local[&v])).collect();

        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &tris {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        let mut boundary: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&(a, b), &count) in &directed {
            let back = directed.get(&(b, a)).copied().unwrap_or(0);
            for _ in back..count {
                boundary.entry(a).or_default().push(b);
            }
        }
        for outs in boundary.values_mut() {
            outs.sort_unstable();
        }

        let mut loops = Vec::new();
        while let Some((&start, _)) = boundary.iter().find(|(_, outs)| !outs.is_empty()) {
            let mut chain = vec![start];
            let mut at = start;
            loop {
                let outs = boundary.get_mut(&at).expect("boundary vertex");
                let next = outs.remove(0);
                if next == start {
                    break;
                }
                chain.push(next);
                at = next;
                if boundary.get(&at).is_none_or(|o| o.is_empty()) {
                    return Err(Error::validation(format!(
                        "body-part boundary through mesh vertex {} is not a closed loop",
                        vertices[at]
                    )));
                }
            }
            let c = vertices.len() + loops.len();
            for k in 0..chain.len() {
                let (a, b) = (chain[k], chain[(k + 1) % chain.len()]);
                tris.push([b, a, c]);
            }
            loops.push(chain);
        }
        Ok(SubMesh {
            vertices,
            loops,
            faces: tris,
        })
    }

    fn positions(&self, frame: &[Vec3]) -> Vec<Vec3> {
        let mut pts: Vec<Vec3> = self.vertices.iter().map(|&v| frame[v]).collect();
        for l in &self.loops {
            let c = l.iter().map(|&i| pts[i]).sum::<Vec3>() / l.len() as f64;
            pts.push(c);
        }
        pts
    }

    fn mesh(&self, frame: &[Vec3]) -> Mesh {
        Mesh {
            vertices: self.positions(frame),
            faces: self.faces.clone(),
        }
    }
}

/// Body-part partition of a character's mesh.
#[derive(Clone, Debug)]
pub struct PartMeshes {
    names: Vec<String>,
    limb: Vec<bool>,
    vertex_part: Vec<usize>,
    face_part: Vec<usize>,
    vertex_of: Vec<Vec<usize>>,
    submeshes: Vec<Option<SubMesh>>,
}

impl PartMeshes {
    /// Label vertices by the part of their dominant joint and faces by the
    /// part carrying the largest summed weight over their three vertices.
    pub fn new(character: &Character) -> Result<Self> {
        let parts = &character.parts;
        if parts.len() > MAX_PARTS {
            return Err(Error::validation(format!(
                "{} body parts exceed the supported {MAX_PARTS}",
                parts.len()
            )));
        }
        let mesh = &character.mesh;
        let w = &character.weights;
        let mut vertex_part = Vec::with_capacity(mesh.vertices.len());
        for i in 0..mesh.vertices.len() {
            if w.per_point[i].is_empty() {
                return Err(Error::validation(format!("vertex {i} has no skin weights")));
            }
            vertex_part.push(parts.of_joint(w.dominant_joint(i)));
        }
        let face_part: Vec<usize> = mesh
            .faces
            .iter()
            .map(|face| {
                let labels = face.map(|v| vertex_part[v]);
                if labels[0] == labels[1] && labels[1] == labels[2] {
                    return labels[0];
                }
                let mut mass = vec![0.0; parts.len()];
                for &v in face {
                    for &(j, wj) in &w.per_point[v] {
                        mass[parts.of_joint(j)] += wj;
                    }
                }
                labels
                    .into_iter()
                    .fold(labels[0], |best, p| if mass[p] > mass[best] || (mass[p] == mass[best] && p < best) { p } else { best })
            })
            .collect();

        let mut faces_of = vec![Vec::new(); parts.len()];
        for (f, &p) in face_part.iter().enumerate() {
            faces_of[p].push(f);
        }
        let mut vertex_of = vec![Vec::new(); parts.len()];
        for (v, &p) in vertex_part.iter().enumerate() {
            vertex_of[p].push(v);
        }
        let submeshes = faces_of
            .iter()
            .map(|faces| {
                if faces.is_empty() {
                    return Ok(None);
                }
                let sub = SubMesh::build(mesh, faces)?;
                Ok(Some(sub))
            })
            .collect::<Result<Vec<_>>>()?;
        for (p, sub) in submeshes.iter().enumerate() {
            if let Some(sub) = sub {
                sub.mesh(&mesh.vertices).check_watertight().map_err(|e| {
                    Error::validation(format!("capped sub-mesh of part {:?}: {e}", parts.name(p)))
                })?;
            }
        }
        Ok(PartMeshes {
            names: parts.names().to_vec(),
            limb: (0..parts.len()).map(|p| parts.is_limb(p)).collect(),
            vertex_part,
            face_part,
            vertex_of,
            submeshes,
        })
    }

    pub fn part_count(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, part: usize) -> &str {
        &self.names[part]
    }

    pub fn vertex_part(&self, v: usize) -> usize {
        self.vertex_part[v]
    }

    pub fn face_part(&self, f: usize) -> usize {
        self.face_part[f]
    }

    /// Vertices labelled with `part`.
    pub fn vertices_of(&self, part: usize) -> &[usize] {
        &self.vertex_of[part]
    }

    /// Number of vertices belonging to limb parts.
    pub fn limb_vertex_count(&self) -> usize {
        self.vertex_part.iter().filter(|&&p| self.limb[p]).count()
    }

    /// The capped sub-mesh of `part` deformed to `frame`, if the part owns faces.
    pub fn submesh(&self, part: usize, frame: &[Vec3]) -> Option<Mesh> {
        self.submeshes[part].as_ref().map(|s| s.mesh(frame))
    }

    /// For every vertex, the set of other parts whose sub-mesh contains it.
    /// A vertex that belongs to a sub-mesh's surface is never inside it.
    pub fn analyze(&self, frame: &[Vec3]) -> Result<FrameAnalysis> {
        if frame.len() != self.vertex_part.len() {
            return Err(Error::structural(format!(
                "frame has {} vertices, mesh has {}",
                frame.len(),
                self.vertex_part.len()
            )));
        }
        let mut inside = vec![0u128; frame.len()];
        for (q, sub) in self.submeshes.iter().enumerate() {
            let Some(sub) = sub else { continue };
            let pts = sub.positions(frame);
            let (lo, hi) = crate::character::mesh::bounding_box(&pts);
            let bvh = Bvh::new(&pts, &sub.faces);
            let mut on_surface = vec![false; frame.len()];
            for &v in &sub.vertices {
                on_surface[v] = true;
            }
            for (v, p) in frame.iter().enumerate() {
                if self.vertex_part[v] == q || on_surface[v] {
                    continue;
                }
                if p.iter().zip(lo.iter().zip(hi.iter())).any(|(x, (l, h))| x < l || x > h) {
                    continue;
                }
                if parity(&bvh, p) {
                    inside[v] |= 1u128 << q;
                }
            }
        }
        let bounds = self
            .vertex_of
            .iter()
            .map(|vs| {
                if vs.is_empty() {
                    None
                } else {
                    let pts: Vec<Vec3> = vs.iter().map(|&v| frame[v]).collect();
                    Some(crate::character::mesh::bounding_box(&pts))
                }
            })
            .collect();
        Ok(FrameAnalysis { inside, bounds })
    }
}

/// Per-frame inside/outside state.
#[derive(Clone, Debug)]
pub struct FrameAnalysis {
    /// Bit `q` of `inside[v]` is set when vertex `v` lies inside part `q`.
    pub inside: Vec<u128>,
    bounds: Vec<Option<(Vec3, Vec3)>>,
}

impl FrameAnalysis {
    pub fn is_inside(&self, v: usize, part: usize) -> bool {
        self.inside[v] >> part & 1 == 1
    }
}

/// Deform the rest mesh by linear blend skinning for every pose.
pub fn deform_sequence(character: &Character, poses: &[Pose]) -> Result<Vec<Vec<Vec3>>> {
    let rest = character.rest_transforms();
    poses
        .par_iter()
        .map(|pose| {
            let posed = forward_kinematics(&character.skeleton, pose)?;
            linear_blend_skinning(&character.mesh.vertices, &character.weights, &rest, &posed)
        })
        .collect()
}

/// Analyze every frame in parallel, preserving frame order.
pub fn analyze_sequence(parts: &PartMeshes, frames: &[Vec<Vec3>]) -> Result<Vec<FrameAnalysis>> {
    frames.par_iter().map(|f| parts.analyze(f)).collect()
}

/// Percentage of limb vertices inside another part's sub-mesh, over all frames.
pub fn penetration_rate(parts: &PartMeshes, analyses: &[FrameAnalysis]) -> f64 {
    let limb = parts.limb_vertex_count();
    if limb == 0 || analyses.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    for a in analyses {
        hits += a
            .inside
            .iter()
            .enumerate()
            .filter(|&(v, &mask)| parts.limb[parts.vertex_part[v]] && mask != 0)
            .count();
    }
    100.0 * hits as f64 / (limb * analyses.len()) as f64
}

/// A body-part contact in one frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub frame: usize,
    pub parts: (String, String),
    pub present: bool,
}

/// Frame-by-pair contact presence grid. Pair labels are ordered
/// lexicographically within each pair and the pair list is sorted.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactGrid {
    pub pairs: Vec<(String, String)>,
    /// `present[frame][pair]`.
    pub present: Vec<Vec<bool>>,
}

impl ContactGrid {
    pub fn frames(&self) -> usize {
        self.present.len()
    }

    pub fn events(&self) -> Vec<ContactEvent> {
        let mut out = Vec::new();
        for (t, row) in self.present.iter().enumerate() {
            for (pair, &p) in self.pairs.iter().zip(row) {
                out.push(ContactEvent {
                    frame: t,
                    parts: pair.clone(),
                    present: p,
                });
            }
        }
        out
    }

    /// Presence of `(a, b)` in frame `t`, in either label order.
    pub fn get(&self, t: usize, a: &str, b: &str) -> bool {
        let key = normalize_pair(a, b);
        self.pairs
            .iter()
            .position(|p| *p == key)
            .is_some_and(|i| self.present[t][i])
    }
}

fn normalize_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// A pair of distinct parts is in contact when their closest vertices are
/// nearer than `delta_c` and neither part has a vertex inside the other.
pub fn detect_contacts(
    parts: &PartMeshes,
    frames: &[Vec<Vec3>],
    analyses: &[FrameAnalysis],
    delta_c: f64,
) -> Result<ContactGrid> {
    if !(delta_c > 0.0) || !delta_c.is_finite() {
        return Err(Error::validation(format!("contact threshold {delta_c} must be positive")));
    }
    if frames.len() != analyses.len() {
        return Err(Error::structural("frame and analysis counts differ"));
    }
    let n = parts.part_count();
    let mut index_pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if parts.vertex_of[a].is_empty() || parts.vertex_of[b].is_empty() {
                continue;
            }
            index_pairs.push((a, b));
        }
    }
    let mut labelled: Vec<((String, String), (usize, usize))> = index_pairs
        .into_iter()
        .map(|(a, b)| (normalize_pair(&parts.names[a], &parts.names[b]), (a, b)))
        .collect();
    labelled.sort();
    let present = frames
        .par_iter()
        .zip(analyses)
        .map(|(frame, an)| {
            labelled
                .iter()
                .map(|&(_, (a, b))| pair_in_contact(parts, frame, an, a, b, delta_c))
                .collect()
        })
        .collect();
    Ok(ContactGrid {
        pairs: labelled.into_iter().map(|(l, _)| l).collect(),
        present,
    })
}

fn pair_in_contact(parts: &PartMeshes, frame: &[Vec3], an: &FrameAnalysis, a: usize, b: usize, delta_c: f64) -> bool {
    let (Some((alo, ahi)), Some((blo, bhi))) = (an.bounds[a], an.bounds[b]) else {
        return false;
    };
    let gap = (blo - ahi).sup(&(alo - bhi)).sup(&Vec3::zeros());
    if gap.norm() >= delta_c {
        return false;
    }
    if parts.vertex_of[a].iter().any(|&v| an.is_inside(v, b)) || parts.vertex_of[b].iter().any(|&v| an.is_inside(v, a)) {
        return false;
    }
    let d2 = delta_c * delta_c;
    let near = |p: &Vec3, lo: &Vec3, hi: &Vec3| {
        let out = (lo - p).sup(&(p - hi)).sup(&Vec3::zeros());
        out.norm_squared() < d2
    };
    let bs: Vec<Vec3> = parts.vertex_of[b]
        .iter()
        .map(|&v| frame[v])
        .filter(|p| near(p, &alo, &ahi))
        .collect();
    parts.vertex_of[a]
        .iter()
        .map(|&v| frame[v])
        .filter(|p| near(p, &blo, &bhi))
        .any(|p| bs.iter().any(|q| (p - q).norm_squared() < d2))
}

/// Confusion-matrix counts and ratios. Ratios with a zero denominator are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Penetration rate of the evaluated motion, in percent.
    pub pen_rate: f64,
    pub delta_c: f64,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub accuracy: Option<f64>,
}

/// Raw confusion counts between a source and a target contact grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fn_: usize,
    pub fp: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }

    pub fn report(&self, pen_rate: f64, delta_c: f64) -> MetricsReport {
        MetricsReport {
            pen_rate,
            delta_c,
            tp: self.tp,
            fn_: self.fn_,
            fp: self.fp,
            tn: self.tn,
            precision: self.precision(),
            recall: self.recall(),
            accuracy: self.accuracy(),
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Classify every (frame, pair) cell. Pairs missing from one grid count as
/// absent there.
pub fn contact_preservation(source: &ContactGrid, target: &ContactGrid) -> Result<Confusion> {
    if source.frames() != target.frames() {
        return Err(Error::validation(format!(
            "source has {} frames, target has {}",
            source.frames(),
            target.frames()
        )));
    }
    let mut pairs: Vec<&(String, String)> = source.pairs.iter().chain(&target.pairs).collect();
    pairs.sort();
    pairs.dedup();
    let column = |g: &ContactGrid, p: &(String, String)| g.pairs.iter().position(|q| q == p);
    let mut c = Confusion::default();
    for p in pairs {
        let (s, t) = (column(source, p), column(target, p));
        for f in 0..source.frames() {
            let a = s.is_some_and(|i| source.present[f][i]);
            let b = t.is_some_and(|i| target.present[f][i]);
            match (a, b) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    Ok(c)
}

/// Contacts and penetration of one character animated by one motion.
#[derive(Clone, Debug)]
pub struct SequenceMetrics {
    pub pen_rate: f64,
    pub contacts: ContactGrid,
}

/// Deform, analyze and measure a pose sequence.
pub fn measure_sequence(character: &Character, poses: &[Pose], delta_c: f64) -> Result<SequenceMetrics> {
    let parts = PartMeshes::new(character)?;
    let frames = deform_sequence(character, poses)?;
    let analyses = analyze_sequence(&parts, &frames)?;
    Ok(SequenceMetrics {
        pen_rate: penetration_rate(&parts, &analyses),
        contacts: detect_contacts(&parts, &frames, &analyses, delta_c)?,
    })
}

/// Compare a source sequence against a retargeted one. The contact
/// threshold defaults to 1% of the evaluated character's height and the
/// penetration rate is that of the retargeted motion.
pub fn compare_motions(
    source: (&Character, &[Pose]),
    target: (&Character, &[Pose]),
    delta_c: Option<f64>,
) -> Result<MetricsReport> {
    let delta_src = delta_c.unwrap_or(DEFAULT_CONTACT_FRACTION * source.0.height());
    let delta_tgt = delta_c.unwrap_or(DEFAULT_CONTACT_FRACTION * target.0.height());
    let a = measure_sequence(source.0, source.1, delta_src)?;
    let b = measure_sequence(target.0, target.1, delta_tgt)?;
    Ok(contact_preservation(&a.contacts, &b.contacts)?.report(b.pen_rate, delta_tgt))
}
