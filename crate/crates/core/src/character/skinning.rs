use crate::character::kinematics::JointTransforms;
use crate::character::skeleton::Skeleton;
use crate::error::{Error, Result};
use crate::math::{Rigid, Vec3};

/// Sparse per-point skinning weights `(joint, weight)`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SkinWeights {
    pub per_point: Vec<Vec<(usize, f64)>>,
}

impl SkinWeights {
    pub fn new(per_point: Vec<Vec<(usize, f64)>>, joints: usize) -> Result<Self> {
        let w = SkinWeights { per_point };
        w.validate(joints)?;
        Ok(w)
    }

    pub fn len(&self) -> usize {
        self.per_point.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_point.is_empty()
    }

    pub fn validate(&self, joints: usize) -> Result<()> {
        for (i, ws) in self.per_point.iter().enumerate() {
            let mut sum = 0.0;
            for &(j, w) in ws {
                if j >= joints {
                    return Err(Error::validation(format!(
                        "point {i} is weighted to joint {j} but the skeleton has {joints}"
                    )));
                }
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(Error::validation(format!("point {i} has invalid weight {w}")));
                }
                sum += w;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!("weights of point {i} sum to {sum}")));
            }
        }
        Ok(())
    }

    /// Joint with the largest weight (lowest index on ties).
    pub fn dominant_joint(&self, i: usize) -> usize {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for &(j, w) in &self.per_point[i] {
            if w > best.1 || (w == best.1 && j < best.0) {
                best = (j, w);
            }
        }
        best.0
    }

    /// Weights of a point on a triangle, blended barycentrically from the
    /// triangle's vertex weights.
    pub fn blend(&self, vertices: [usize; 3], bary: [f64; 3]) -> Vec<(usize, f64)> {
        let mut acc: Vec<(usize, f64)> = Vec::new();
        for (v, b) in vertices.iter().zip(bary) {
            for &(j, w) in &self.per_point[*v] {
                match acc.iter_mut().find(|(k, _)| *k == j) {
                    Some(entry) => entry.1 += b * w,
                    None => acc.push((j, b * w)),
                }
            }
        }
        acc.retain(|&(_, w)| w > 0.0);
        acc.sort_by_key(|&(j, _)| j);
        let total: f64 = acc.iter().map(|(_, w)| w).sum();
        for entry in &mut acc {
            entry.1 /= total;
        }
        acc
    }

    /// Fallback binding for synthetic characters: each point is bound with
    /// weight 1 to the parent joint of its nearest bone segment.
    pub fn nearest_bone(points: &[Vec3], skeleton: &Skeleton) -> Self {
        let bones = skeleton.bones();
        let per_point = points
            .iter()
            .map(|p| {
                let mut best = (0usize, f64::INFINITY);
                for &(a, b) in &bones {
                    let d = point_segment_distance(
                        p,
                        &skeleton.joint(a).rest_global,
                        &skeleton.joint(b).rest_global,
                    );
                    if d < best.1 {
                        best = (a, d);
                    }
                }
                vec![(best.0, 1.0)]
            })
            .collect();
        SkinWeights { per_point }
    }
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Per-joint skinning transforms `posed_j * rest_j^-1`.
pub fn skinning_transforms(rest: &JointTransforms, posed: &JointTransforms) -> Vec<Rigid> {
    rest.transforms
        .iter()
        .zip(&posed.transforms)
        .map(|(r, p)| p.compose(&r.inverse()))
        .collect()
}

/// Linear blend skinning of rest-pose points.
pub fn linear_blend_skinning(
    points: &[Vec3],
    weights: &SkinWeights,
    rest: &JointTransforms,
    posed: &JointTransforms,
) -> Result<Vec<Vec3>> {
    if points.len() != weights.len() {
        return Err(Error::structural(format!(
            "{} points but {} weight lists",
            points.len(),
            weights.len()
        )));
    }
    if rest.len() != posed.len() {
        return Err(Error::structural("rest and posed transforms differ in joint count"));
    }
    weights.validate(rest.len())?;
    let skin = skinning_transforms(rest, posed);
    Ok(points
        .iter()
        .zip(&weights.per_point)
        .map(|(p, ws)| ws.iter().map(|&(j, w)| skin[j].apply(p) * w).sum())
        .collect())
}
