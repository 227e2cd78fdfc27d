//! The individual loss terms as plain functions of their inputs.

use super::{LossWeights, ReachSets, EPS_DIR};
use crate::character::RootMotion;
use crate::math::Vec3;
use crate::projection::VertexGrid;
use crate::proximity::PairTable;
use crate::proximity::PairMask;

fn nn_sq_dists(from: &[Vec3], to: &[Vec3]) -> Vec<f64> {
    let grid = VertexGrid::new(to);
    from.iter().map(|p| grid.nearest(p).1).collect()
}

/// Mean and max nearest-neighbor squared distances from anchors to mesh
/// vertices plus the mean from vertices back to anchors.
pub fn l_simplification(anchors: &[Vec3], vertices: &[Vec3]) -> f64 {
    if anchors.is_empty() || vertices.is_empty() {
        return 0.0;
    }
    let a2v = nn_sq_dists(anchors, vertices);
    let v2a = nn_sq_dists(vertices, anchors);
    let mean_a = a2v.iter().sum::<f64>() / a2v.len() as f64;
    let max_a = a2v.iter().copied().fold(0.0, f64::max);
    let mean_v = v2a.iter().sum::<f64>() / v2a.len() as f64;
    mean_a + max_a + mean_v
}

/// `tau^2`.
pub fn l_projection(tau: f64) -> f64 {
    tau * tau
}

/// Mean squared displacement of the adapted anchors from the initial ones.
pub fn l_init(adapted: &[Vec3], initial: &[Vec3]) -> f64 {
    if adapted.is_empty() {
        return 0.0;
    }
    adapted
        .iter()
        .zip(initial)
        .map(|(a, b)| (a - b).norm_squared())
        .sum::<f64>()
        / adapted.len() as f64
}

/// Weighted squared excess of anchor-to-ball-joint distance over the limb
/// length, averaged over all (end-effector, effector anchor, outside anchor)
/// triples.
pub fn l_reachability(ball_positions: &[Vec3; 4], anchors: &[Vec3], w_src: &PairTable<f64>, sets: &ReachSets) -> f64 {
    let count = sets.triple_count();
    if count == 0 {
        log::warn!("reachability term has no anchor triples");
        return 0.0;
    }
    let mut sum = 0.0;
    for k in 0..4 {
        for &j in &sets.outside[k] {
            let excess = ((ball_positions[k] - anchors[j]).norm() - sets.length[k]).max(0.0);
            if excess == 0.0 {
                continue;
            }
            let w: f64 = sets.effector[k].iter().map(|&i| w_src.get(i, j)).sum();
            sum += w * excess * excess;
        }
    }
    sum / count as f64
}

fn masked_mean(mask: &PairMask, f: impl Fn(usize, usize) -> f64) -> f64 {
    if mask.count() == 0 {
        log::warn!("pair mask is empty");
        return 0.0;
    }
    mask.pairs().map(|(i, j)| f(i, j)).sum::<f64>() / mask.count() as f64
}

pub fn l_ordering(ord_src: &PairTable<f64>, ord_tgt: &PairTable<f64>, w_src: &PairTable<f64>, mask: &PairMask) -> f64 {
    masked_mean(mask, |i, j| {
        let r = ord_src.get(i, j) - ord_tgt.get(i, j);
        w_src.get(i, j) * r * r
    })
}

pub fn l_anchor_distance(d_src: &PairTable<f64>, d_tgt: &PairTable<f64>, w_src: &PairTable<f64>, mask: &PairMask) -> f64 {
    masked_mean(mask, |i, j| {
        let r = d_src.get(i, j) - d_tgt.get(i, j);
        w_src.get(i, j) * r * r
    })
}

/// Weighted `1 - cos` between source and target pair directions. Pairs
/// where either vector is shorter than [`EPS_DIR`] are skipped; their count
/// is returned alongside the loss.
pub fn l_anchor_direction(
    dir_src: &PairTable<Vec3>,
    dir_tgt: &PairTable<Vec3>,
    w_src: &PairTable<f64>,
    mask: &PairMask,
) -> (f64, usize) {
    if mask.count() == 0 {
        log::warn!("pair mask is empty");
        return (0.0, 0);
    }
    let mut sum = 0.0;
    let mut excluded = 0;
    for (i, j) in mask.pairs() {
        let s = dir_src.get(i, j);
        let t = dir_tgt.get(i, j);
        let (sn, tn) = (s.norm(), t.norm());
        if sn <= EPS_DIR || tn <= EPS_DIR {
            excluded += 1;
            continue;
        }
        sum += w_src.get(i, j) * (1.0 - s.dot(&t) / (sn * tn));
    }
    (sum / mask.count() as f64, excluded)
}

/// Per-frame motion features compared by the reconstruction term.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures {
    /// 6D encoding of each local joint rotation.
    pub rotations: Vec<[f64; 6]>,
    /// World joint positions.
    pub positions: Vec<Vec3>,
    pub root: RootMotion,
    pub contacts: Vec<bool>,
}

pub fn l_reconstruction(pred: &FrameFeatures, reference: &FrameFeatures, w: &LossWeights) -> f64 {
    let q: f64 = pred
        .rotations
        .iter()
        .zip(&reference.rotations)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
        .sum();
    let p: f64 = pred
        .positions
        .iter()
        .zip(&reference.positions)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    let r: f64 = pred
        .root
        .as_array()
        .iter()
        .zip(reference.root.as_array())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let c = pred.contacts.iter().zip(&reference.contacts).filter(|(a, b)| a != b).count() as f64;
    w.q * q + w.p * p + w.r * r + w.c * c
}

/// Sum of squared joint velocity differences.
pub fn l_velocity(pred: &[Vec3], reference: &[Vec3]) -> f64 {
    pred.iter().zip(reference).map(|(a, b)| (a - b).norm_squared()).sum()
}
