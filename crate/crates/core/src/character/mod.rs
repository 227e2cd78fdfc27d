//! Skeleton, mesh and motion representation: forward kinematics, linear
//! blend skinning and the derived per-frame quantities.

pub mod kinematics;
pub mod mesh;
pub mod motion;
pub mod skeleton;
pub mod skinning;

pub use kinematics::{build_motion, compute_velocities, forward_kinematics, JointTransforms};
pub use mesh::Mesh;
pub use motion::{Motion, MotionFrame, Pose, RootMotion, DEFAULT_DT};
pub use skeleton::{BodyParts, EndEffector, JointSpec, Skeleton};
pub use skinning::{linear_blend_skinning, SkinWeights};

use crate::anchors::AnchorSet;
use crate::error::{Error, Result};

/// A skinned character: rest mesh, skeleton, skin weights, body-part
/// labels and (optionally) its extracted anchor set.
#[derive(Clone, Debug, PartialEq)]
pub struct Character {
    pub name: String,
    pub skeleton: Skeleton,
    pub mesh: Mesh,
    pub weights: SkinWeights,
    pub parts: BodyParts,
    pub anchors: Option<AnchorSet>,
}

impl Character {
    pub fn new(
        name: impl Into<String>,
        skeleton: Skeleton,
        mesh: Mesh,
        weights: SkinWeights,
        parts: BodyParts,
    ) -> Result<Self> {
        let c = Character {
            name: name.into(),
            skeleton,
            mesh,
            weights,
            parts,
            anchors: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        if self.weights.len() != self.mesh.vertices.len() {
            return Err(Error::validation(format!(
                "{} skin weight lists for {} vertices",
                self.weights.len(),
                self.mesh.vertices.len()
            )));
        }
        self.weights.validate(self.skeleton.len())?;
        if self.parts.joint_count() != self.skeleton.len() {
            return Err(Error::validation("body-part labels do not cover every joint"));
        }
        if !(self.height() > 0.0) {
            return Err(Error::validation("character height must be positive"));
        }
        if let Some(a) = &self.anchors {
            a.validate(self)?;
        }
        Ok(())
    }

    /// Rest-mesh vertical extent.
    pub fn height(&self) -> f64 {
        self.mesh.height()
    }

    pub fn rest_transforms(&self) -> JointTransforms {
        JointTransforms::rest(&self.skeleton)
    }

    /// The cached anchor set, or an error naming the character.
    pub fn anchor_set(&self) -> Result<&AnchorSet> {
        self.anchors
            .as_ref()
            .ok_or_else(|| Error::validation(format!("character {:?} has no anchors", self.name)))
    }
}
