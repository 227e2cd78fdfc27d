use crate::anchors::AnchorSet;
use crate::character::{EndEffector, Skeleton};
use crate::error::Result;

/// Per end-effector anchor sets used by the reachability term.
#[derive(Clone, Debug, PartialEq)]
pub struct ReachSets {
    /// Ball joint of each end-effector.
    pub ball: [usize; 4],
    /// Straightened limb length of each end-effector.
    pub length: [f64; 4],
    /// Anchors carried by the end-effector.
    pub effector: [Vec<usize>; 4],
    /// Anchors not on the end-effector's limb: candidate interaction targets.
    pub outside: [Vec<usize>; 4],
}

impl ReachSets {
    /// Effector anchors are those on bones leaving the end-effector's subtree
    /// (the bone ending at the end-effector when it is a leaf). Limb anchors
    /// lie on bones from the ball joint down to, and below, the end-effector.
    pub fn new(skeleton: &Skeleton, set: &AnchorSet) -> Result<Self> {
        let mut ball = [0; 4];
        let mut length = [0.0; 4];
        let mut effector: [Vec<usize>; 4] = Default::default();
        let mut outside: [Vec<usize>; 4] = Default::default();
        for e in EndEffector::ALL {
            let k = e.index();
            let eff = skeleton.end_effector(e);
            ball[k] = skeleton.ball_joint(e);
            length[k] = skeleton.limb_length(e)?;
            let below = skeleton.subtree(eff);
            let mut limb = below.clone();
            for j in skeleton.chain(ball[k], eff)? {
                limb[j] = true;
            }
            let leaf = skeleton.children(eff).is_empty();
            for (i, a) in set.anchors.iter().enumerate() {
                let (p, c) = a.bone;
                let carried = if leaf { c == eff } else { below[p] };
                if carried {
                    effector[k].push(i);
                }
                if !limb[c] {
                    outside[k].push(i);
                }
            }
        }
        Ok(ReachSets {
            ball,
            length,
            effector,
            outside,
        })
    }

    /// `|R|`: the number of (end-effector, effector anchor, outside anchor) triples.
    pub fn triple_count(&self) -> usize {
        (0..4).map(|k| self.effector[k].len() * self.outside[k].len()).sum()
    }
}
