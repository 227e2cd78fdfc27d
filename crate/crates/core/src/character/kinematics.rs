//! Forward kinematics and the per-frame motion features derived from it.

use crate::character::motion::{Motion, MotionFrame, Pose, RootMotion, DEFAULT_DT};
use crate::character::skeleton::Skeleton;
use crate::error::{Error, Result};
use crate::math::{rot_y, wrap_angle, Mat3, Rigid, Vec3};

/// World-space transforms of every joint for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTransforms {
    pub transforms: Vec<Rigid>,
    pub dt: f64,
}

impl JointTransforms {
    pub fn len(&self) -> usize {
        self.transforms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transforms.is_empty()
    }

    pub fn position(&self, j: usize) -> Vec3 {
        self.transforms[j].translation
    }

    pub fn rotation(&self, j: usize) -> &Mat3 {
        &self.transforms[j].rotation
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.transforms.iter().map(|t| t.translation).collect()
    }

    /// Rest-pose transforms: identity rotations at the rest joint positions.
    pub fn rest(skeleton: &Skeleton) -> Self {
        JointTransforms {
            transforms: skeleton
                .joints()
                .iter()
                .map(|j| Rigid::new(Mat3::identity(), j.rest_global))
                .collect(),
            dt: DEFAULT_DT,
        }
    }
}

/// Forward kinematics with validation of the pose.
pub fn forward_kinematics(skeleton: &Skeleton, pose: &Pose) -> Result<JointTransforms> {
    if pose.rotations.len() != skeleton.len() {
        return Err(Error::structural(format!(
            "pose has {} rotations for {} joints",
            pose.rotations.len(),
            skeleton.len()
        )));
    }
    for (j, q) in pose.rotations.iter().enumerate() {
        let n = q.as_ref().norm();
        if (n - 1.0).abs() >= 1e-6 {
            return Err(Error::validation(format!("rotation of joint {j} has norm {n}")));
        }
    }
    if !pose.root_position.iter().all(|c| c.is_finite()) {
        return Err(Error::validation("root position is not finite"));
    }
    Ok(JointTransforms {
        transforms: fk(skeleton, pose),
        dt: DEFAULT_DT,
    })
}

/// Unchecked forward kinematics. The root sits at `pose.root_position`;
/// each child is `parent * (offset, q_child)`.
pub(crate) fn fk(skeleton: &Skeleton, pose: &Pose) -> Vec<Rigid> {
    let mut out: Vec<Rigid> = Vec::with_capacity(skeleton.len());
    for (j, joint) in skeleton.joints().iter().enumerate() {
        let local = *pose.rotations[j].to_rotation_matrix().matrix();
        let t = match joint.parent {
            None => Rigid::new(local, pose.root_position),
            Some(p) => {
                let parent = out[p];
                Rigid::new(parent.rotation * local, parent.apply(&joint.offset))
            }
        };
        out.push(t);
    }
    out
}

/// Heading of the facing frame: the root's forward axis (+z) projected on
/// the ground plane. `None` when the forward axis is (nearly) vertical.
pub fn heading(root_rotation: &Mat3) -> Option<f64> {
    let f = root_rotation.column(2);
    if f.x * f.x + f.z * f.z < 1e-12 {
        None
    } else {
        Some(f.x.atan2(f.z))
    }
}

/// Facing-frame coordinates of a world point.
pub fn to_facing(world: &Vec3, heading: f64, root: &Vec3) -> Vec3 {
    rot_y(-heading) * (world - Vec3::new(root.x, 0.0, root.z))
}

/// Build a motion (with positions, velocities, root motion) from poses.
///
/// `contacts` defaults to all-false when `None`.
pub fn build_motion(
    skeleton: &Skeleton,
    poses: Vec<Pose>,
    dt: f64,
    contacts: Option<Vec<Vec<bool>>>,
) -> Result<Motion> {
    if !(dt > 0.0) {
        return Err(Error::validation(format!("frame interval must be positive, got {dt}")));
    }
    if poses.is_empty() {
        return Err(Error::validation("motion has no frames"));
    }
    if let Some(c) = &contacts {
        if c.len() != poses.len() {
            return Err(Error::validation("contact label count differs from frame count"));
        }
    }
    let mut frames = Vec::with_capacity(poses.len());
    let mut prev_heading = 0.0;
    let mut prev_root: Option<Vec3> = None;
    for (t, pose) in poses.into_iter().enumerate() {
        let world = forward_kinematics(skeleton, &pose)?;
        let theta = heading(world.rotation(0)).unwrap_or(prev_heading);
        let root = pose.root_position;
        let positions: Vec<Vec3> = world
            .transforms
            .iter()
            .map(|tr| to_facing(&tr.translation, theta, &root))
            .collect();
        let root_motion = match prev_root {
            None => RootMotion {
                h: root.y,
                ..RootMotion::default()
            },
            Some(pr) => {
                let d = rot_y(-prev_heading) * (root - pr);
                RootMotion {
                    dx: d.x,
                    dz: d.z,
                    dtheta: wrap_angle(theta - prev_heading),
                    h: root.y,
                }
            }
        };
        let c = match &contacts {
            Some(c) if c[t].len() == skeleton.len() => c[t].clone(),
            Some(_) => {
                return Err(Error::validation(format!(
                    "frame {t}: contact labels do not match the joint count"
                )))
            }
            None => vec![false; skeleton.len()],
        };
        let frame = MotionFrame {
            pose,
            prev_positions: positions.clone(),
            velocities: vec![Vec3::zeros(); skeleton.len()],
            positions,
            root_motion,
            contacts: c,
            heading: theta,
        };
        frame.validate(skeleton.len())?;
        frames.push(frame);
        prev_heading = theta;
        prev_root = Some(root);
    }
    let frames = compute_velocities(frames, dt)?;
    Ok(Motion { frames, dt })
}

/// Fill `prev_positions` and `velocities` from consecutive `positions`.
/// Frame 0 gets zero velocity.
pub fn compute_velocities(mut frames: Vec<MotionFrame>, dt: f64) -> Result<Vec<MotionFrame>> {
    if !(dt > 0.0) {
        return Err(Error::validation(format!("frame interval must be positive, got {dt}")));
    }
    if frames.is_empty() {
        return Err(Error::validation("at least one frame is required"));
    }
    for t in 0..frames.len() {
        let prev = if t == 0 {
            frames[0].positions.clone()
        } else {
            frames[t - 1].positions.clone()
        };
        let f = &mut frames[t];
        if prev.len() != f.positions.len() {
            return Err(Error::structural(format!("frame {t} changes the joint count")));
        }
        f.velocities = f
            .positions
            .iter()
            .zip(&prev)
            .map(|(p, q)| (p - q) / dt)
            .collect();
        f.prev_positions = prev;
    }
    Ok(frames)
}

/// Label joints in ground contact: height below `max_height` and speed
/// below `max_speed`.
pub fn label_ground_contacts(
    skeleton: &Skeleton,
    motion: &Motion,
    max_height: f64,
    max_speed: f64,
) -> Vec<Vec<bool>> {
    let world: Vec<Vec<Vec3>> = motion
        .frames
        .iter()
        .map(|f| fk(skeleton, &f.pose).iter().map(|t| t.translation).collect())
        .collect();
    (0..world.len())
        .map(|t| {
            (0..skeleton.len())
                .map(|j| {
                    let prev = if t == 0 { world[0][j] } else { world[t - 1][j] };
                    let speed = (world[t][j] - prev).norm() / motion.dt;
                    world[t][j].y <= max_height && speed <= max_speed
                })
                .collect()
        })
        .collect()
}
