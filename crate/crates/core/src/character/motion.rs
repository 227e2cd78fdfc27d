use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};

/// Default sampling interval (30 fps).
pub const DEFAULT_DT: f64 = 1.0 / 30.0;

/// The free variables of one frame: local joint rotations and the world
/// position of the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotations: Vec<Quat>,
    pub root_position: Vec3,
}

impl Pose {
    /// All-identity pose with the root at `root_position`.
    pub fn identity(joints: usize, root_position: Vec3) -> Self {
        Pose {
            rotations: vec![Quat::identity(); joints],
            root_position,
        }
    }
}

/// Root displacement relative to the previous frame's facing frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RootMotion {
    pub dx: f64,
    pub dz: f64,
    pub dtheta: f64,
    /// Absolute root height above the ground plane.
    pub h: f64,
}

impl RootMotion {
    pub fn as_array(&self) -> [f64; 4] {
        [self.dx, self.dz, self.dtheta, self.h]
    }
}

/// One frame of motion with its derived quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFrame {
    pub pose: Pose,
    /// Joint positions in this frame's facing frame.
    pub positions: Vec<Vec3>,
    /// `positions` of the previous frame (this frame's for frame 0).
    pub prev_positions: Vec<Vec3>,
    /// `(positions - prev_positions) / dt`.
    pub velocities: Vec<Vec3>,
    pub root_motion: RootMotion,
    /// Per-joint ground contact labels.
    pub contacts: Vec<bool>,
    /// Heading angle of the facing frame about +y.
    pub heading: f64,
}

impl MotionFrame {
    pub fn validate(&self, joints: usize) -> Result<()> {
        if self.pose.rotations.len() != joints {
            return Err(Error::structural(format!(
                "frame has {} rotations for {joints} joints",
                self.pose.rotations.len()
            )));
        }
        for (j, q) in self.pose.rotations.iter().enumerate() {
            let n = q.as_ref().norm();
            if (n - 1.0).abs() >= 1e-6 {
                return Err(Error::validation(format!("rotation of joint {j} has norm {n}")));
            }
        }
        if self.root_motion.h < 0.0 {
            return Err(Error::validation(format!(
                "root height {} is below the ground",
                self.root_motion.h
            )));
        }
        Ok(())
    }
}

/// A motion sequence sampled at a fixed interval.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub frames: Vec<MotionFrame>,
    pub dt: f64,
}

impl Motion {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose.clone()).collect()
    }

    pub fn fps(&self) -> f64 {
        1.0 / self.dt
    }
}
