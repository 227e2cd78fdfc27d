use rayon::prelude::*;

use super::AnchorSet;
use crate::character::kinematics::JointTransforms;
use crate::character::skinning::skinning_transforms;
use crate::character::SkinWeights;
use crate::error::{Error, Result};
use crate::math::{Mat3, Rigid, Vec3};

/// Anchor positions and tangent frames in one posed frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DeformedAnchors {
    pub positions: Vec<Vec3>,
    /// Columns `[tangent, bitangent, normal]`.
    pub frames: Vec<Mat3>,
}

impl DeformedAnchors {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn normals(&self) -> Vec<Vec3> {
        self.frames.iter().map(|f| f.column(2).into()).collect()
    }
}

/// Deform an anchor set by linear blend skinning. `weights` are the mesh
/// vertex weights; each anchor's weights are blended from its face.
pub fn deform_anchors(
    set: &AnchorSet,
    mesh_faces: &[[usize; 3]],
    weights: &SkinWeights,
    rest: &JointTransforms,
    posed: &JointTransforms,
) -> Result<DeformedAnchors> {
    if rest.len() != posed.len() {
        return Err(Error::structural("rest and posed transforms differ in joint count"));
    }
    weights.validate(rest.len())?;
    let per_anchor: Vec<Vec<(usize, f64)>> = set
        .anchors
        .iter()
        .map(|a| {
            let f = mesh_faces
                .get(a.face)
                .ok_or_else(|| Error::validation(format!("anchor face {} is missing", a.face)))?;
            Ok(weights.blend(*f, a.bary))
        })
        .collect::<Result<_>>()?;
    let skin = skinning_transforms(rest, posed);
    Ok(deform_points(&set.rest_positions(), &set.rest_frames(), &per_anchor, &skin))
}

/// Skin rest points and their frames with per-point weights and per-joint
/// skinning transforms.
pub fn deform_points(
    points: &[Vec3],
    frames: &[Mat3],
    weights: &[Vec<(usize, f64)>],
    skin: &[Rigid],
) -> DeformedAnchors {
    let (positions, frames) = points
        .par_iter()
        .zip(frames)
        .zip(weights)
        .map(|((p, f), ws)| {
            let mut lin = Mat3::zeros();
            let mut off = Vec3::zeros();
            for &(j, w) in ws {
                lin += skin[j].rotation * w;
                off += skin[j].translation * w;
            }
            let pos = lin * p + off;
            let frame = if lin == Mat3::identity() {
                *f
            } else {
                gram_schmidt_frame(&(lin * f.column(0)), &(lin * f.column(2)))
            };
            (pos, frame)
        })
        .unzip();
    DeformedAnchors { positions, frames }
}

/// Orthonormal frame `[t, n x t, n]` from a tangent and an approximate
/// normal, keeping the tangent direction exactly.
pub fn gram_schmidt_frame(tangent: &Vec3, normal: &Vec3) -> Mat3 {
    let t = tangent.normalize();
    let n = (normal - t * t.dot(normal)).normalize();
    Mat3::from_columns(&[t, n.cross(&t), n])
}
