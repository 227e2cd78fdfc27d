//! Bone-indexed surface anchors: extraction by ray casting from the
//! skeleton and deformation under a pose.

mod deform;
mod extract;
pub mod raycast;

pub use deform::{deform_anchors, deform_points, gram_schmidt_frame, DeformedAnchors};
pub use extract::{extract_anchors, DEFAULT_RAYS_PER_SAMPLE, DEFAULT_SAMPLES_PER_BONE};

use crate::character::Character;
use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

/// A surface point found by casting ray `ray` from sample `sample` of a bone.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchor {
    /// (parent joint, child joint).
    pub bone: (usize, usize),
    pub sample: usize,
    pub ray: usize,
    pub face: usize,
    pub bary: [f64; 3],
    pub rest_position: Vec3,
    /// Rest tangent frame with columns `[tangent, bitangent, normal]`.
    pub frame: Mat3,
}

impl Anchor {
    pub fn tangent(&self) -> Vec3 {
        self.frame.column(0).into()
    }

    pub fn bitangent(&self) -> Vec3 {
        self.frame.column(1).into()
    }

    pub fn normal(&self) -> Vec3 {
        self.frame.column(2).into()
    }
}

/// The ordered anchor set of one character. Anchors are stored in
/// (bone, sample, ray) order, so two characters with the same skeleton
/// topology and sampling settings have index-aligned sets.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorSet {
    pub anchors: Vec<Anchor>,
    pub samples_per_bone: usize,
    pub rays_per_sample: usize,
    /// Body-part label of each anchor (the part of the bone's parent joint).
    pub parts: Vec<usize>,
    /// Skin weights of each anchor, blended from its face's vertices.
    pub weights: Vec<Vec<(usize, f64)>>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn rest_positions(&self) -> Vec<Vec3> {
        self.anchors.iter().map(|a| a.rest_position).collect()
    }

    pub fn rest_frames(&self) -> Vec<Mat3> {
        self.anchors.iter().map(|a| a.frame).collect()
    }

    /// Check every anchor invariant against the character it belongs to.
    pub fn validate(&self, character: &Character) -> Result<()> {
        let sk = &character.skeleton;
        let mesh = &character.mesh;
        let bones = sk.bones();
        let expected = bones.len() * self.samples_per_bone * self.rays_per_sample;
        if self.anchors.len() != expected {
            return Err(Error::validation(format!(
                "{} anchors but {} bones x {} samples x {} rays = {expected}",
                self.anchors.len(),
                bones.len(),
                self.samples_per_bone,
                self.rays_per_sample
            )));
        }
        if self.parts.len() != expected || self.weights.len() != expected {
            return Err(Error::validation("anchor labels or weights do not cover every anchor"));
        }
        for (i, a) in self.anchors.iter().enumerate() {
            let b = i / (self.samples_per_bone * self.rays_per_sample);
            let s = (i / self.rays_per_sample) % self.samples_per_bone;
            let r = i % self.rays_per_sample;
            if a.bone != bones[b] || a.sample != s || a.ray != r {
                return Err(Error::validation(format!("anchor {i} is out of (bone, sample, ray) order")));
            }
            if a.face >= mesh.faces.len() {
                return Err(Error::validation(format!("anchor {i} references missing face {}", a.face)));
            }
            let sum: f64 = a.bary.iter().sum();
            if a.bary.iter().any(|&w| w < -1e-12) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!("anchor {i} has barycentrics {:?}", a.bary)));
            }
            let tri = mesh.face_vertices(a.face);
            let p = tri[0] * a.bary[0] + tri[1] * a.bary[1] + tri[2] * a.bary[2];
            let scale = 1.0 + p.norm();
            if (p - a.rest_position).norm() > 1e-9 * scale {
                return Err(Error::validation(format!("anchor {i} does not lie on its face")));
            }
            let f = &a.frame;
            if (f.transpose() * f - Mat3::identity()).abs().max() > 1e-6 || (f.determinant() - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!("anchor {i} frame is not a rotation")));
            }
            let axis = (sk.joint(a.bone.1).rest_global - sk.joint(a.bone.0).rest_global).normalize();
            if (a.tangent() - axis).norm() > 1e-6 {
                return Err(Error::validation(format!("anchor {i} tangent is not the bone axis")));
            }
            if self.parts[i] >= character.parts.len() {
                return Err(Error::validation(format!("anchor {i} has unknown body part")));
            }
        }
        let weights = crate::character::SkinWeights {
            per_point: self.weights.clone(),
        };
        weights.validate(sk.len())
    }
}
