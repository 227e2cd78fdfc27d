//! Procedural test characters and motions: a segmented mannequin whose
//! bones each carry a closed body of revolution, plus a few scripted
//! motions (gentle full-body sway, a hand reaching to the head).

use rand::Rng;

use crate::anchors::extract_anchors;
use crate::character::kinematics::fk;
use crate::character::{build_motion, BodyParts, Character, EndEffector, JointSpec, Mesh, Motion, Pose, Skeleton, SkinWeights};
use crate::error::Result;
use crate::math::{perpendicular_basis, Quat, Vec3};

/// Distance from a joint to the tip of the body around the bone that
/// starts or ends there.
const TIP_INSET: f64 = 2.5;

/// Shape parameters of the mannequin.
#[derive(Clone, Debug, PartialEq)]
pub struct MannequinOptions {
    /// Anchor samples per bone; body rings are placed on the sample planes.
    pub samples: usize,
    /// Rays per sample; ring vertices sit on the ray directions.
    pub rays: usize,
    /// Uniform scale applied to the whole character.
    pub scale: f64,
    /// Head sphere radius before scaling.
    pub head_radius: f64,
    /// Latitude and longitude counts of a dense head sphere. `None` puts
    /// head vertices only on the anchor rays, like every other bone.
    pub dense_head: Option<(usize, usize)>,
}

impl Default for MannequinOptions {
    fn default() -> Self {
        MannequinOptions {
            samples: 2,
            rays: 6,
            scale: 2.0,
            head_radius: 9.0,
            dense_head: None,
        }
    }
}

/// Joint indices of the mannequin skeleton.
pub mod joints {
    pub const HIPS: usize = 0;
    pub const SPINE: usize = 1;
    pub const CHEST: usize = 2;
    pub const NECK: usize = 3;
    pub const HEAD: usize = 4;
    pub const HEAD_TOP: usize = 5;
    pub const L_SHOULDER: usize = 6;
    pub const L_ELBOW: usize = 7;
    pub const L_HAND: usize = 8;
    pub const L_HAND_END: usize = 9;
    pub const R_SHOULDER: usize = 10;
    pub const R_ELBOW: usize = 11;
    pub const R_HAND: usize = 12;
    pub const R_HAND_END: usize = 13;
    pub const L_HIP: usize = 14;
    pub const L_KNEE: usize = 15;
    pub const L_FOOT: usize = 16;
    pub const L_TOE: usize = 17;
    pub const R_HIP: usize = 18;
    pub const R_KNEE: usize = 19;
    pub const R_FOOT: usize = 20;
    pub const R_TOE: usize = 21;
}

/// A 22-joint humanoid skeleton in T-pose, y up, facing +z, about 185
/// units tall before scaling.
pub fn mannequin_skeleton(scale: f64) -> Skeleton {
    let v = |x: f64, y: f64, z: f64| Vec3::new(x, y, z) * scale;
    let spec = |name: &str, parent: Option<usize>, offset: Vec3| JointSpec::new(name, parent, offset);
    let mut specs = vec![
        spec("hips", None, v(0.0, 95.0, 0.0)),
        spec("spine", Some(0), v(0.0, 20.0, 0.0)),
        spec("chest", Some(1), v(0.0, 20.0, 0.0)),
        spec("neck", Some(2), v(0.0, 24.0, 0.0)),
        spec("head", Some(3), v(0.0, 10.0, 0.0)),
        spec("head_top", Some(4), v(0.0, 18.0, 0.0)),
    ];
    for (side, s) in [("l", 1.0), ("r", -1.0)] {
        let base = specs.len();
        specs.push(spec(&format!("{side}_shoulder"), Some(2), v(17.0 * s, 1.0, 0.0)));
        specs.push(spec(&format!("{side}_elbow"), Some(base), v(25.0 * s, 0.0, 0.0)));
        specs.push(spec(&format!("{side}_hand"), Some(base + 1), v(25.0 * s, 0.0, 0.0)));
        specs.push(spec(&format!("{side}_hand_end"), Some(base + 2), v(14.0 * s, 0.0, 0.0)));
    }
    for (side, s) in [("l", 1.0), ("r", -1.0)] {
        let base = specs.len();
        specs.push(spec(&format!("{side}_hip"), Some(0), v(13.0 * s, -8.0, 0.0)));
        specs.push(spec(&format!("{side}_knee"), Some(base), v(0.0, -40.0, 0.0)));
        specs.push(spec(&format!("{side}_foot"), Some(base + 1), v(0.0, -40.0, 0.0)));
        specs.push(spec(&format!("{side}_toe"), Some(base + 2), v(0.0, 0.0, 14.0)));
    }
    use joints::*;
    Skeleton::new(
        specs,
        [L_HAND_END, R_HAND_END, L_FOOT, R_FOOT],
        [L_SHOULDER, R_SHOULDER, L_HIP, R_HIP],
    )
    .expect("mannequin skeleton is well formed")
}

/// Body radius (before scaling) of the bone leaving joint `parent`.
fn body_radius(parent: usize, child: usize) -> f64 {
    use joints::*;
    match (parent, child) {
        (HIPS, SPINE) | (SPINE, CHEST) => 9.0,
        (CHEST, NECK) | (NECK, HEAD) => 3.5,
        (HIPS, _) | (CHEST, _) => 4.0,
        (L_HIP, _) | (R_HIP, _) | (L_KNEE, _) | (R_KNEE, _) => 7.0,
        (L_SHOULDER, _) | (R_SHOULDER, _) | (L_ELBOW, _) | (R_ELBOW, _) => 6.0,
        _ => 5.0,
    }
}

/// Build the mannequin mesh, rigid skin binding, default body parts and
/// anchors.
///
/// Every bone gets its own closed body: rings of `rays` vertices on the
/// anchor sample planes, closed by a tip vertex near each joint. With the
/// default options each anchor lands exactly on a mesh vertex.
pub fn mannequin(options: &MannequinOptions) -> Result<Character> {
    let skeleton = mannequin_skeleton(options.scale);
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut binding = Vec::new();
    for (a, b) in skeleton.bones() {
        let pa = skeleton.joint(a).rest_global;
        let pb = skeleton.joint(b).rest_global;
        let start = vertices.len();
        if a == joints::HEAD {
            head_body(options, pa, pb, &mut vertices, &mut faces);
        } else {
            let radius = body_radius(a, b) * options.scale;
            let rings: Vec<(f64, f64)> = (0..options.samples)
                .map(|s| ((s as f64 + 0.5) / options.samples as f64, radius))
                .collect();
            let len = (pb - pa).norm();
            let inset = TIP_INSET * options.scale / len;
            let tips = (inset, 1.0 - inset);
            revolve(pa, pb, &rings, tips, options.rays, &mut vertices, &mut faces);
        }
        binding.extend(std::iter::repeat_n(vec![(a, 1.0)], vertices.len() - start));
    }
    let mesh = Mesh::new(vertices, faces)?;
    let weights = SkinWeights::new(binding, skeleton.len())?;
    let parts = BodyParts::default_for(&skeleton);
    let mut character = Character::new("mannequin", skeleton, mesh, weights, parts)?;
    let anchors = extract_anchors(
        &character.mesh,
        &character.skeleton,
        &character.weights,
        &character.parts,
        options.samples,
        options.rays,
    )?;
    character.anchors = Some(anchors);
    character.validate()?;
    Ok(character)
}

/// Sphere around the head bone's midpoint.
fn head_body(options: &MannequinOptions, pa: Vec3, pb: Vec3, vertices: &mut Vec<Vec3>, faces: &mut Vec<[usize; 3]>) {
    let center = (pa + pb) * 0.5;
    let len = (pb - pa).norm();
    let r = options.head_radius * options.scale;
    let (rings, segments): (Vec<(f64, f64)>, usize) = match options.dense_head {
        None => {
            let rings = (0..options.samples)
                .map(|s| {
                    let y = ((s as f64 + 0.5) / options.samples as f64 - 0.5) * len;
                    (y, (r * r - y * y).max(0.0).sqrt())
                })
                .collect();
            (rings, options.rays)
        }
        Some((lat, lon)) => {
            let rings = (1..=lat)
                .map(|k| {
                    let phi = std::f64::consts::PI * k as f64 / (lat + 1) as f64;
                    (-r * phi.cos(), r * phi.sin())
                })
                .collect();
            (rings, lon)
        }
    };
    let axis = (pb - pa) / len;
    // revolve() works in bone fractions; express rings relative to a
    // segment spanning the sphere's poles
    let lo = center - axis * r;
    let hi = center + axis * r;
    let rings: Vec<(f64, f64)> = rings.into_iter().map(|(y, rad)| ((y + r) / (2.0 * r), rad)).collect();
    revolve(lo, hi, &rings, (0.0, 1.0), segments, vertices, faces);
}

/// Closed body of revolution around segment `a -> b`: rings at bone
/// fractions with given radii, and tips at fractions `tips`.
fn revolve(
    a: Vec3,
    b: Vec3,
    rings: &[(f64, f64)],
    tips: (f64, f64),
    segments: usize,
    vertices: &mut Vec<Vec3>,
    faces: &mut Vec<[usize; 3]>,
) {
    let axis = (b - a).normalize();
    let (u, v) = perpendicular_basis(&axis);
    let base = vertices.len();
    vertices.push(a + (b - a) * tips.0);
    for &(f, radius) in rings {
        let center = a + (b - a) * f;
        for s in 0..segments {
            let angle = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(center + (u * angle.cos() + v * angle.sin()) * radius);
        }
    }
    let top = vertices.len();
    vertices.push(a + (b - a) * tips.1);
    let ring = |k: usize, s: usize| base + 1 + k * segments + s % segments;
    // outward orientation: counter-clockwise seen from outside
    for s in 0..segments {
        faces.push([base, ring(0, s + 1), ring(0, s)]);
    }
    for k in 0..rings.len() - 1 {
        for s in 0..segments {
            faces.push([ring(k, s), ring(k, s + 1), ring(k + 1, s + 1)]);
            faces.push([ring(k, s), ring(k + 1, s + 1), ring(k + 1, s)]);
        }
    }
    let last = rings.len() - 1;
    for s in 0..segments {
        faces.push([top, ring(last, s), ring(last, s + 1)]);
    }
}

/// Scale of a mannequin skeleton relative to its unscaled layout.
pub fn skeleton_scale(skeleton: &Skeleton) -> f64 {
    skeleton.joint(0).rest_global.y / 95.0
}

/// Rest pose of a skeleton (identity rotations, root at its rest place).
pub fn rest_pose(skeleton: &Skeleton) -> Pose {
    Pose::identity(skeleton.len(), skeleton.joint(0).rest_global)
}

/// A gentle full-body motion on the mannequin in a slight crouch: arms
/// swing forward and back at shoulder height, the spine twists, the knees
/// pump, and the root walks forward.
pub fn sway_motion(skeleton: &Skeleton, frames: usize, dt: f64) -> Result<Motion> {
    use joints::*;
    let scale = skeleton_scale(skeleton);
    let crouch = 0.7;
    let drop = 80.0 * (1.0 - f64::cos(crouch)) * scale;
    let poses = (0..frames)
        .map(|t| {
            let phase = std::f64::consts::TAU * t as f64 / 30.0;
            let (s, c) = phase.sin_cos();
            let mut pose = rest_pose(skeleton);
            let rot = |axis: Vec3, angle: f64| Quat::from_scaled_axis(axis * angle);
            pose.rotations[HIPS] = rot(Vec3::y(), 0.15 * s);
            pose.rotations[SPINE] = rot(Vec3::y(), 0.1 * c);
            pose.rotations[NECK] = rot(Vec3::x(), 0.1 * s);
            pose.rotations[L_SHOULDER] = rot(Vec3::y(), 0.25 * s);
            pose.rotations[R_SHOULDER] = rot(Vec3::y(), 0.25 * c);
            pose.rotations[L_ELBOW] = rot(Vec3::y(), -0.2 - 0.1 * c);
            pose.rotations[R_ELBOW] = rot(Vec3::y(), 0.2 + 0.1 * s);
            let bend = 0.04 * s;
            pose.rotations[L_HIP] = rot(Vec3::x(), -crouch - bend);
            pose.rotations[R_HIP] = rot(Vec3::x(), -crouch + bend);
            pose.rotations[L_KNEE] = rot(Vec3::x(), 2.0 * crouch + bend);
            pose.rotations[R_KNEE] = rot(Vec3::x(), 2.0 * crouch - bend);
            pose.root_position += Vec3::new(2.0 * s, -drop / scale + 1.5 * c, 1.0 * t as f64) * scale;
            pose
        })
        .collect();
    build_motion(skeleton, poses, dt, None)
}

/// A deep tucked squat with small oscillations of every limb and a slow
/// forward drift. The body is folded tightly enough that every anchor stays
/// within the straightened reach of all four ball joints in every frame, so
/// the reachability term is exactly zero on the source motion.
pub fn tuck_motion(skeleton: &Skeleton, frames: usize, dt: f64) -> Result<Motion> {
    use joints::*;
    let scale = skeleton_scale(skeleton);
    let (hip, knee, spine, neck, shoulder, elbow, abduct) = (2.3, 2.9, 0.8, 0.4, 1.2, 1.8, 0.4);
    let amp = 0.05;
    let poses = (0..frames)
        .map(|t| {
            let phase = std::f64::consts::TAU * t as f64 / 30.0;
            let (s, c) = phase.sin_cos();
            let mut pose = rest_pose(skeleton);
            let rot = |axis: Vec3, angle: f64| Quat::from_scaled_axis(axis * angle);
            pose.rotations[HIPS] = rot(Vec3::y(), amp * s);
            pose.rotations[SPINE] = rot(Vec3::x(), spine + amp * c);
            pose.rotations[CHEST] = rot(Vec3::x(), spine);
            pose.rotations[NECK] = rot(Vec3::x(), neck + amp * s);
            pose.rotations[L_SHOULDER] = rot(Vec3::y(), -shoulder + amp * s) * rot(Vec3::z(), -abduct);
            pose.rotations[R_SHOULDER] = rot(Vec3::y(), shoulder + amp * c) * rot(Vec3::z(), abduct);
            pose.rotations[L_ELBOW] = rot(Vec3::y(), -elbow - amp * c);
            pose.rotations[R_ELBOW] = rot(Vec3::y(), elbow + amp * s);
            pose.rotations[L_HIP] = rot(Vec3::x(), -hip - amp * s);
            pose.rotations[R_HIP] = rot(Vec3::x(), -hip + amp * s);
            pose.rotations[L_KNEE] = rot(Vec3::x(), knee + amp * s);
            pose.rotations[R_KNEE] = rot(Vec3::x(), knee - amp * s);
            pose.rotations[L_FOOT] = rot(Vec3::x(), hip - knee);
            pose.rotations[R_FOOT] = rot(Vec3::x(), hip - knee);
            pose.root_position += Vec3::new(s, -60.0 + 0.5 * c, 0.5 * t as f64) * scale;
            pose
        })
        .collect();
    build_motion(skeleton, poses, dt, None)
}

/// Random pose: every joint rotated by up to `max_angle` about a random
/// axis, root displaced by up to `max_shift`.
pub fn random_pose<R: Rng>(skeleton: &Skeleton, rng: &mut R, max_angle: f64, max_shift: f64) -> Pose {
    let mut pose = rest_pose(skeleton);
    for q in pose.rotations.iter_mut() {
        *q = Quat::from_scaled_axis(random_unit(rng) * rng.random_range(0.0..=max_angle));
    }
    pose.root_position += random_unit(rng) * rng.random_range(0.0..=max_shift);
    pose
}

pub fn random_unit<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Right hand reaching from the T-pose to touch the right side of the
/// head, holding, and pulling back. The touch places the hand tip
/// `gap` units outside the head sphere of radius `head_radius`.
///
/// Frames `[frames / 3, frames * 5 / 6)` hold the touch.
pub fn hand_to_head_motion(skeleton: &Skeleton, frames: usize, dt: f64, head_radius: f64, gap: f64) -> Result<Motion> {
    use joints::*;
    let rest = rest_pose(skeleton);
    let world = fk(skeleton, &rest);
    let center = (world[HEAD].translation + world[HEAD_TOP].translation) * 0.5;
    let normal = Vec3::new(-1.0, -0.35, 0.25).normalize();
    // the hand bone points into the head along -normal; its tip body ends
    // TIP_INSET before the hand_end joint
    let hand_len = skeleton.joint(R_HAND_END).offset.norm();
    let tip_surface = center + normal * (head_radius + gap);
    let wrist = tip_surface + normal * (hand_len - TIP_INSET * skeleton_scale(skeleton));
    let mut touch = rest.clone();
    let chain = [R_SHOULDER, R_ELBOW];
    // bend the elbow first so the solver settles on a natural solution
    touch.rotations[R_ELBOW] = Quat::from_scaled_axis(Vec3::new(0.0, -1.0, 1.0).normalize() * 1.5);
    ccd(skeleton, &mut touch, &chain, R_HAND, &wrist, 200);
    // orient the hand bone along -normal
    let w = fk(skeleton, &touch);
    let current = (w[R_HAND_END].translation - w[R_HAND].translation).normalize();
    let turn = Quat::rotation_between(&current, &-normal).unwrap_or_else(Quat::identity);
    let parent_rot = Quat::from_matrix(&w[R_ELBOW].rotation);
    touch.rotations[R_HAND] = parent_rot.inverse() * turn * parent_rot * touch.rotations[R_HAND];

    let hold_start = frames / 3;
    let hold_end = frames * 5 / 6;
    let poses = (0..frames)
        .map(|t| {
            let s = if t < hold_start {
                smooth(t as f64 / hold_start.max(1) as f64)
            } else if t < hold_end {
                1.0
            } else {
                smooth(1.0 - (t - hold_end + 1) as f64 / (frames - hold_end).max(1) as f64)
            };
            let mut pose = rest.clone();
            for j in [R_SHOULDER, R_ELBOW, R_HAND] {
                pose.rotations[j] = rest.rotations[j].slerp(&touch.rotations[j], s);
            }
            pose
        })
        .collect();
    build_motion(skeleton, poses, dt, None)
}

fn smooth(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Cyclic coordinate descent: rotate each joint of `chain` (root-most
/// first in the list; iterated from the tip) so `effector` approaches
/// `target`.
pub fn ccd(skeleton: &Skeleton, pose: &mut Pose, chain: &[usize], effector: usize, target: &Vec3, iterations: usize) {
    for _ in 0..iterations {
        for &j in chain.iter().rev() {
            let w = fk(skeleton, pose);
            let pivot = w[j].translation;
            let to_eff = w[effector].translation - pivot;
            let to_target = target - pivot;
            if to_eff.norm() < 1e-9 || to_target.norm() < 1e-9 {
                continue;
            }
            let Some(turn) = Quat::rotation_between(&to_eff, &to_target) else {
                continue;
            };
            let parent_rot = match skeleton.parent(j) {
                Some(p) => Quat::from_matrix(&w[p].rotation),
                None => Quat::identity(),
            };
            pose.rotations[j] = parent_rot.inverse() * turn * parent_rot * pose.rotations[j];
        }
    }
}

/// Indices of the end-effector joints of the mannequin, in
/// [`EndEffector::ALL`] order.
pub fn end_effector_joints(skeleton: &Skeleton) -> [usize; 4] {
    EndEffector::ALL.map(|e| skeleton.end_effector(e))
}
