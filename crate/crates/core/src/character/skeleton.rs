use std::collections::{BTreeMap, HashSet};
use std::fmt;

use crate::error::{Error, Result};
use crate::math::Vec3;

/// The four end-effectors that take part in reachability.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EndEffector {
    LeftHand,
    RightHand,
    LeftFoot,
    RightFoot,
}

impl EndEffector {
    pub const ALL: [EndEffector; 4] = [
        EndEffector::LeftHand,
        EndEffector::RightHand,
        EndEffector::LeftFoot,
        EndEffector::RightFoot,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> &'static str {
        match self {
            EndEffector::LeftHand => "lh",
            EndEffector::RightHand => "rh",
            EndEffector::LeftFoot => "lf",
            EndEffector::RightFoot => "rf",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        EndEffector::ALL.into_iter().find(|e| e.code() == code)
    }
}

impl fmt::Display for EndEffector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint in the rest pose. For the root this is
    /// its rest position.
    pub offset: Vec3,
    pub rest_global: Vec3,
}

/// Rest-pose joint hierarchy, topologically ordered (parents before children).
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Joint>,
    children: Vec<Vec<usize>>,
    end_effectors: [usize; 4],
    ball_joints: [usize; 4],
}

/// Input description of one joint.
#[derive(Clone, Debug)]
pub struct JointSpec {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
}

impl JointSpec {
    pub fn new(name: impl Into<String>, parent: Option<usize>, offset: Vec3) -> Self {
        JointSpec {
            name: name.into(),
            parent,
            offset,
        }
    }
}

impl Skeleton {
    /// Build and validate a skeleton.
    ///
    /// `end_effectors` and `ball_joints` are indexed by [`EndEffector::index`].
    pub fn new(
        specs: Vec<JointSpec>,
        end_effectors: [usize; 4],
        ball_joints: [usize; 4],
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::structural("skeleton has no joints"));
        }
        let mut names = HashSet::new();
        let mut roots = 0;
        let mut joints: Vec<Joint> = Vec::with_capacity(specs.len());
        for (i, spec) in specs.into_iter().enumerate() {
            if !names.insert(spec.name.clone()) {
                return Err(Error::structural(format!("duplicate joint name {:?}", spec.name)));
            }
            if !spec.offset.iter().all(|v| v.is_finite()) {
                return Err(Error::validation(format!("joint {:?} has a non-finite offset", spec.name)));
            }
            let rest_global = match spec.parent {
                None => {
                    roots += 1;
                    spec.offset
                }
                Some(p) if p < i => joints[p].rest_global + spec.offset,
                Some(p) => {
                    return Err(Error::structural(format!(
                        "joint {:?} (index {i}) has parent {p}; parents must precede children",
                        spec.name
                    )))
                }
            };
            joints.push(Joint {
                name: spec.name,
                parent: spec.parent,
                offset: spec.offset,
                rest_global,
            });
        }
        if roots != 1 || joints[0].parent.is_some() {
            return Err(Error::structural(format!(
                "skeleton must have exactly one root at index 0, found {roots}"
            )));
        }
        let mut children = vec![Vec::new(); joints.len()];
        for (i, j) in joints.iter().enumerate() {
            if let Some(p) = j.parent {
                children[p].push(i);
            }
        }
        let sk = Skeleton {
            joints,
            children,
            end_effectors,
            ball_joints,
        };
        for e in EndEffector::ALL {
            let (eff, ball) = (end_effectors[e.index()], ball_joints[e.index()]);
            if eff >= sk.len() || ball >= sk.len() {
                return Err(Error::structural(format!("end-effector {e} references a missing joint")));
            }
            if eff == ball || !sk.is_ancestor(ball, eff) {
                return Err(Error::structural(format!(
                    "ball joint {:?} is not an ancestor of end-effector {e} ({:?})",
                    sk.joints[ball].name, sk.joints[eff].name
                )));
            }
        }
        Ok(sk)
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, i: usize) -> &Joint {
        &self.joints[i]
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.joints[i].parent
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn end_effector(&self, e: EndEffector) -> usize {
        self.end_effectors[e.index()]
    }

    pub fn ball_joint(&self, e: EndEffector) -> usize {
        self.ball_joints[e.index()]
    }

    pub fn end_effectors(&self) -> [usize; 4] {
        self.end_effectors
    }

    pub fn ball_joints(&self) -> [usize; 4] {
        self.ball_joints
    }

    /// True when `a` is a strict ancestor of `d`.
    pub fn is_ancestor(&self, a: usize, d: usize) -> bool {
        let mut cur = self.joints[d].parent;
        while let Some(p) = cur {
            if p == a {
                return true;
            }
            cur = self.joints[p].parent;
        }
        false
    }

    /// Membership mask of the subtree rooted at `j` (including `j`).
    pub fn subtree(&self, j: usize) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        mask[j] = true;
        for i in j + 1..self.len() {
            if let Some(p) = self.joints[i].parent {
                if mask[p] {
                    mask[i] = true;
                }
            }
        }
        mask
    }

    /// Joints strictly below `ancestor` on the path to `descendant`, ordered
    /// from the ancestor side. Includes `descendant`.
    pub fn chain(&self, ancestor: usize, descendant: usize) -> Result<Vec<usize>> {
        let mut path = Vec::new();
        let mut cur = descendant;
        while cur != ancestor {
            path.push(cur);
            cur = self.joints[cur].parent.ok_or_else(|| {
                Error::structural(format!(
                    "{:?} is not an ancestor of {:?}",
                    self.joints[ancestor].name, self.joints[descendant].name
                ))
            })?;
        }
        path.reverse();
        Ok(path)
    }

    /// Straightened reach of a limb: sum of bone lengths from the ball joint
    /// (exclusive) to the end-effector (inclusive).
    pub fn limb_length(&self, e: EndEffector) -> Result<f64> {
        let chain = self.chain(self.ball_joint(e), self.end_effector(e))?;
        let len: f64 = chain.iter().map(|&j| self.joints[j].offset.norm()).sum();
        if len > 0.0 {
            Ok(len)
        } else {
            Err(Error::structural(format!("limb {e} has zero length")))
        }
    }

    /// Bones as (parent, child) joint pairs, ordered by child index.
    pub fn bones(&self) -> Vec<(usize, usize)> {
        self.joints
            .iter()
            .enumerate()
            .filter_map(|(c, j)| j.parent.map(|p| (p, c)))
            .collect()
    }

    /// Check that `other` has the same joint count, names and parents.
    pub fn check_same_topology(&self, other: &Skeleton) -> Result<()> {
        let mut diffs = Vec::new();
        if self.len() != other.len() {
            diffs.push(format!("joint count {} vs {}", self.len(), other.len()));
        }
        for (i, (a, b)) in self.joints.iter().zip(&other.joints).enumerate() {
            if a.name != b.name || a.parent != b.parent {
                diffs.push(format!("joint {i}: {:?} vs {:?}", a.name, b.name));
            }
        }
        if self.end_effectors != other.end_effectors || self.ball_joints != other.ball_joints {
            diffs.push("end-effector or ball-joint maps differ".into());
        }
        if diffs.is_empty() {
            Ok(())
        } else {
            Err(Error::structural(format!("skeleton mismatch: {}", diffs.join("; "))))
        }
    }

    /// Mean straightened leg length; used to scale root height between characters.
    pub fn leg_length(&self) -> Result<f64> {
        Ok(0.5 * (self.limb_length(EndEffector::LeftFoot)? + self.limb_length(EndEffector::RightFoot)?))
    }
}

/// Body-part labelling of joints. Bones and vertices inherit the label of
/// the joint that drives them.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyParts {
    names: Vec<String>,
    joint_part: Vec<usize>,
    limb: Vec<bool>,
}

impl BodyParts {
    /// `joint_labels[j]` is the part name of joint `j`; `limbs` lists the
    /// part names counted as limbs by the penetration metric.
    pub fn new(joint_labels: &[String], limbs: &[String]) -> Result<Self> {
        let mut names: Vec<String> = Vec::new();
        let mut joint_part = Vec::with_capacity(joint_labels.len());
        for label in joint_labels {
            let idx = match names.iter().position(|n| n == label) {
                Some(i) => i,
                None => {
                    names.push(label.clone());
                    names.len() - 1
                }
            };
            joint_part.push(idx);
        }
        for l in limbs {
            if !names.contains(l) {
                return Err(Error::validation(format!("limb part {l:?} labels no joint")));
            }
        }
        let limb = names.iter().map(|n| limbs.contains(n)).collect();
        Ok(BodyParts {
            names,
            joint_part,
            limb,
        })
    }

    /// Default labelling: each limb chain (ball joint side to the end of the
    /// effector subtree) forms one part; every other joint is its own part.
    pub fn default_for(skeleton: &Skeleton) -> Self {
        let mut labels: Vec<Option<String>> = vec![None; skeleton.len()];
        let limb_names = ["left_arm", "right_arm", "left_leg", "right_leg"];
        for e in EndEffector::ALL {
            let name = limb_names[e.index()].to_string();
            let ball = skeleton.ball_joint(e);
            let eff = skeleton.end_effector(e);
            if skeleton.children(ball).len() == 1 {
                labels[ball] = Some(name.clone());
            }
            if let Ok(chain) = skeleton.chain(ball, eff) {
                for j in chain {
                    labels[j] = Some(name.clone());
                }
            }
            for (j, inside) in skeleton.subtree(eff).into_iter().enumerate() {
                if inside {
                    labels[j] = Some(name.clone());
                }
            }
        }
        let labels: Vec<String> = labels
            .into_iter()
            .enumerate()
            .map(|(j, l)| l.unwrap_or_else(|| skeleton.joint(j).name.clone()))
            .collect();
        let limbs: Vec<String> = limb_names
            .iter()
            .filter(|n| labels.iter().any(|l| l == *n))
            .map(|s| s.to_string())
            .collect();
        BodyParts::new(&labels, &limbs).expect("only assigned limb labels are listed")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, part: usize) -> &str {
        &self.names[part]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn of_joint(&self, j: usize) -> usize {
        self.joint_part[j]
    }

    pub fn joint_count(&self) -> usize {
        self.joint_part.len()
    }

    pub fn is_limb(&self, part: usize) -> bool {
        self.limb[part]
    }

    /// Joint name -> part name, for serialization.
    pub fn joint_labels(&self, skeleton: &Skeleton) -> BTreeMap<String, String> {
        self.joint_part
            .iter()
            .enumerate()
            .map(|(j, &p)| (skeleton.joint(j).name.clone(), self.names[p].clone()))
            .collect()
    }

    pub fn limb_names(&self) -> Vec<String> {
        self.names
            .iter()
            .zip(&self.limb)
            .filter(|(_, &l)| l)
            .map(|(n, _)| n.clone())
            .collect()
    }
}
