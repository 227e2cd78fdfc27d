//! The retargeting scene: fixed source-side tables and target data, and the
//! evaluation of both objectives with reverse-mode gradients.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::ops::Range;

use rayon::prelude::*;

use super::{LossReport, LossWeights, Objective, ReachSets, EPS_DIR};
use crate::anchors::{deform_points, gram_schmidt_frame, DeformedAnchors};
use crate::character::kinematics::{fk, heading};
use crate::character::skinning::skinning_transforms;
use crate::character::{Character, JointTransforms, Motion, Pose, RootMotion, Skeleton};
use crate::error::{Error, Result};
use crate::math::{axial, quat_to_6d, rot_y, rot_y_prime, wrap_angle, Mat3, Rigid, Vec3};
use crate::projection::{Projector, SoftPoint, VertexGrid};
use crate::proximity::{
    body_part_mask, direction_matrix, distance_matrix, ordering_matrix, weight_matrix, PairMask, PairTable,
    WeightParams,
};

/// Settings that shape the objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneOptions {
    pub weights: LossWeights,
    /// Decay rate of the interaction weights.
    pub alpha: f64,
    /// Neighbors used by the soft projection.
    pub k: usize,
    /// Weight thresholds as fractions of the source height.
    pub d_min_fraction: f64,
    pub d_max_fraction: f64,
}

impl Default for SceneOptions {
    fn default() -> Self {
        SceneOptions {
            weights: LossWeights::default(),
            alpha: crate::proximity::DEFAULT_ALPHA,
            k: crate::projection::DEFAULT_K,
            d_min_fraction: crate::proximity::D_MIN_FRACTION,
            d_max_fraction: crate::proximity::D_MAX_FRACTION,
        }
    }
}

/// Source-side tables of one frame.
#[derive(Clone, Debug)]
struct SourceFrame {
    dist: PairTable<f64>,
    /// Unit source directions; zero where the pair has no direction.
    dir_unit: PairTable<Vec3>,
    weight: PairTable<f64>,
    ord: PairTable<f64>,
}

/// Reference motion features of one frame.
#[derive(Clone, Debug)]
struct RefFrame {
    sixd: Vec<[f64; 6]>,
    world: Vec<Vec3>,
    root: RootMotion,
    velocities: Vec<Vec3>,
}

/// Gradient of an objective with respect to every free variable.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    /// Per-anchor displacement.
    pub delta: Vec<Vec3>,
    pub tau: f64,
    /// Per frame, per joint: body-frame rotation increment `q <- q * exp(w)`.
    pub rotations: Vec<Vec<Vec3>>,
    /// Per frame world root translation.
    pub root: Vec<Vec3>,
}

impl Gradient {
    pub fn is_finite(&self) -> bool {
        self.tau.is_finite()
            && self.delta.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotations.iter().flatten().all(|v| v.iter().all(|x| x.is_finite()))
            && self.root.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Result of one objective evaluation.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: LossReport,
    pub gradient: Option<Gradient>,
    /// Hash of every discrete choice made during evaluation (neighbor sets,
    /// active clamps, exclusions). Equal fingerprints at two nearby states
    /// mean no kink lies between them.
    pub fingerprint: u64,
}

/// Everything about a retargeting problem that stays fixed while the
/// anchors, temperature and target poses are optimized.
#[derive(Clone, Debug)]
pub struct Scene {
    skeleton: Skeleton,
    rest_joints: Vec<Vec3>,
    rest_anchors: Vec<Vec3>,
    rest_frames: Vec<Mat3>,
    anchor_weights: Vec<Vec<(usize, f64)>>,
    projector: Projector,
    mask: PairMask,
    reach: ReachSets,
    source: Vec<SourceFrame>,
    reference: Vec<RefFrame>,
    dt: f64,
    options: SceneOptions,
    source_params: WeightParams,
}

impl Scene {
    /// Build a scene. `reference` is the target-skeleton motion that the
    /// reconstruction and velocity terms compare against.
    pub fn new(
        source: &Character,
        source_motion: &Motion,
        target: &Character,
        reference: &Motion,
        options: SceneOptions,
    ) -> Result<Self> {
        options.weights.validate()?;
        source.skeleton.check_same_topology(&target.skeleton)?;
        let src_set = source.anchor_set()?;
        let tgt_set = target.anchor_set()?;
        if src_set.len() != tgt_set.len() {
            return Err(Error::structural(format!(
                "source has {} anchors, target {}",
                src_set.len(),
                tgt_set.len()
            )));
        }
        if src_set.parts != tgt_set.parts {
            return Err(Error::structural("source and target anchors carry different body parts"));
        }
        if source_motion.len() != reference.len() || source_motion.is_empty() {
            return Err(Error::validation(format!(
                "source motion has {} frames, reference {}",
                source_motion.len(),
                reference.len()
            )));
        }
        crate::projection::ProjectionParams {
            k: options.k,
            tau: 1.0,
        }
        .validate(target.mesh.vertices.len())?;

        let h = source.height();
        let source_params = WeightParams::new(options.alpha, options.d_min_fraction * h, options.d_max_fraction * h)?;
        let src_rest = JointTransforms::rest(&source.skeleton);
        let src_points = src_set.rest_positions();
        let src_frames = src_set.rest_frames();
        let sources = source_motion
            .frames
            .iter()
            .map(|f| {
                let posed = JointTransforms {
                    transforms: fk(&source.skeleton, &f.pose),
                    dt: source_motion.dt,
                };
                let d = deform_points(&src_points, &src_frames, &src_set.weights, &skinning_transforms(&src_rest, &posed));
                let dist = distance_matrix(&d.positions);
                let dir = direction_matrix(&d.positions, &d.frames)?;
                let dir_unit = dir.map(|v| {
                    let n = v.norm();
                    if n <= EPS_DIR {
                        Vec3::zeros()
                    } else {
                        v / n
                    }
                });
                Ok(SourceFrame {
                    weight: weight_matrix(&dist, &source_params),
                    ord: ordering_matrix(&d.positions, &d.normals())?,
                    dist,
                    dir_unit,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let reference_frames = reference
            .frames
            .iter()
            .map(|f| RefFrame {
                sixd: f.pose.rotations.iter().map(quat_to_6d).collect(),
                world: fk(&target.skeleton, &f.pose).iter().map(|t| t.translation).collect(),
                root: f.root_motion,
                velocities: f.velocities.clone(),
            })
            .collect();

        Ok(Scene {
            rest_joints: target.skeleton.joints().iter().map(|j| j.rest_global).collect(),
            rest_anchors: tgt_set.rest_positions(),
            rest_frames: tgt_set.rest_frames(),
            anchor_weights: tgt_set.weights.clone(),
            projector: Projector::new(&target.mesh.vertices),
            mask: body_part_mask(&tgt_set.parts),
            reach: ReachSets::new(&target.skeleton, tgt_set)?,
            skeleton: target.skeleton.clone(),
            source: sources,
            reference: reference_frames,
            dt: reference.dt,
            options,
            source_params,
        })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn frame_count(&self) -> usize {
        self.source.len()
    }

    pub fn anchor_count(&self) -> usize {
        self.rest_anchors.len()
    }

    pub fn rest_anchors(&self) -> &[Vec3] {
        &self.rest_anchors
    }

    pub fn rest_frames(&self) -> &[Mat3] {
        &self.rest_frames
    }

    pub fn anchor_weights(&self) -> &[Vec<(usize, f64)>] {
        &self.anchor_weights
    }

    pub fn vertices(&self) -> &[Vec3] {
        self.projector.vertices()
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    pub fn mask(&self) -> &PairMask {
        &self.mask
    }

    pub fn reach_sets(&self) -> &ReachSets {
        &self.reach
    }

    pub fn options(&self) -> &SceneOptions {
        &self.options
    }

    pub fn source_params(&self) -> &WeightParams {
        &self.source_params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Source interaction weights of frame `t`.
    pub fn source_weights(&self, t: usize) -> &PairTable<f64> {
        &self.source[t].weight
    }

    pub fn source_distances(&self, t: usize) -> &PairTable<f64> {
        &self.source[t].dist
    }

    pub fn source_ordering(&self, t: usize) -> &PairTable<f64> {
        &self.source[t].ord
    }

    /// Soft-projected adapted anchors for a displacement field.
    pub fn adapt(&self, delta: &[Vec3], tau: f64) -> Result<Vec<Vec3>> {
        Ok(self.soft_points(delta, tau)?.into_iter().map(|s| s.output).collect())
    }

    fn soft_points(&self, delta: &[Vec3], tau: f64) -> Result<Vec<SoftPoint>> {
        if delta.len() != self.anchor_count() {
            return Err(Error::structural(format!(
                "{} displacements for {} anchors",
                delta.len(),
                self.anchor_count()
            )));
        }
        let moved: Vec<Vec3> = self.rest_anchors.iter().zip(delta).map(|(a, d)| a + d).collect();
        self.projector.soft(
            &moved,
            &crate::projection::ProjectionParams {
                k: self.options.k,
                tau,
            },
        )
    }

    /// Deform rest-pose adapted anchors into the given target pose.
    pub fn deform(&self, adapted: &[Vec3], pose: &Pose) -> DeformedAnchors {
        let posed = JointTransforms {
            transforms: fk(&self.skeleton, pose),
            dt: self.dt,
        };
        let rest = JointTransforms::rest(&self.skeleton);
        deform_points(adapted, &self.rest_frames, &self.anchor_weights, &skinning_transforms(&rest, &posed))
    }

    /// Evaluate an objective with soft-projected anchors.
    pub fn evaluate(
        &self,
        delta: &[Vec3],
        tau: f64,
        poses: &[Pose],
        objective: Objective,
        window: Range<usize>,
        with_gradient: bool,
    ) -> Result<Evaluation> {
        if !(tau > 0.0) {
            return Err(Error::numerical("projection", format!("temperature {tau} is not positive")));
        }
        let soft = self.soft_points(delta, tau)?;
        let adapted: Vec<Vec3> = soft.iter().map(|s| s.output).collect();
        let mut hasher = DefaultHasher::new();
        for s in &soft {
            s.neighbors.hash(&mut hasher);
        }
        let mut eval = self.evaluate_inner(&adapted, tau, poses, objective, window, with_gradient, hasher)?;
        if let Some(g) = eval.gradient.as_mut() {
            let vertices = self.projector.vertices();
            let mut g_tau = g.tau;
            for (i, s) in soft.iter().enumerate() {
                let (gp, gt) = s.backward(vertices, tau, &g.delta[i]);
                g.delta[i] = gp;
                g_tau += gt;
            }
            g.tau = g_tau;
            if !g.is_finite() {
                return Err(Error::numerical("gradient", "non-finite gradient"));
            }
        }
        Ok(eval)
    }

    /// Evaluate the loss report for explicitly given adapted anchors (for
    /// instance after hard projection). The temperature only enters the
    /// projection term.
    pub fn report_for_anchors(&self, adapted: &[Vec3], tau: f64, poses: &[Pose]) -> Result<LossReport> {
        if adapted.len() != self.anchor_count() {
            return Err(Error::structural("adapted anchor count differs from the scene"));
        }
        let all = 0..self.frame_count();
        Ok(self
            .evaluate_inner(adapted, tau, poses, Objective::Total, all, false, DefaultHasher::new())?
            .report)
    }

    /// Gradient fields here are with respect to the adapted anchors (in
    /// `delta`) until the caller pulls them back through the projection.
    #[allow(clippy::too_many_arguments)]
    fn evaluate_inner(
        &self,
        adapted: &[Vec3],
        tau: f64,
        poses: &[Pose],
        objective: Objective,
        window: Range<usize>,
        with_gradient: bool,
        mut hasher: DefaultHasher,
    ) -> Result<Evaluation> {
        let frames = self.frame_count();
        if poses.len() != frames {
            return Err(Error::structural(format!("{} poses for {frames} frames", poses.len())));
        }
        if window.start >= window.end || window.end > frames {
            return Err(Error::config(format!("window {window:?} is outside 0..{frames}")));
        }
        let joints = self.skeleton.len();
        for (t, p) in poses.iter().enumerate() {
            if p.rotations.len() != joints {
                return Err(Error::structural(format!("pose {t} has {} rotations", p.rotations.len())));
            }
        }
        let w = &self.options.weights;
        let a_scale = objective.anchor_scale();
        let r_scale = objective.retarget_scale();
        let n = self.anchor_count();
        let mut report = LossReport::default();
        let mut g_adapted = vec![Vec3::zeros(); n];

        // rest-pose terms
        let simp = simplification(adapted, self.projector.vertices(), self.projector.grid());
        report.simp = simp.value;
        simp.hash(&mut hasher);
        let g = a_scale * w.simp;
        if with_gradient && g != 0.0 {
            for (i, gv) in simp.grad.iter().enumerate() {
                g_adapted[i] += gv * g;
            }
        }
        report.proj = tau * tau;
        report.init = super::terms::l_init(adapted, &self.rest_anchors);
        if with_gradient {
            let g = a_scale * w.init * 2.0 / n as f64;
            for i in 0..n {
                g_adapted[i] += (adapted[i] - self.rest_anchors[i]) * g;
            }
        }
        let g_tau = a_scale * w.proj * 2.0 * tau;

        // kinematics for every frame
        let kin: Vec<FrameKinematics> = {
            let mut out: Vec<FrameKinematics> = Vec::with_capacity(frames);
            let mut prev_heading = 0.0;
            for pose in poses {
                let world = fk(&self.skeleton, pose);
                let local: Vec<Mat3> = pose.rotations.iter().map(|q| *q.to_rotation_matrix().matrix()).collect();
                let (theta, heading_ok) = match heading(&world[0].rotation) {
                    Some(h) => (h, true),
                    None => (prev_heading, false),
                };
                prev_heading = theta;
                out.push(FrameKinematics {
                    world,
                    local,
                    heading: theta,
                    heading_ok,
                    root: pose.root_position,
                });
            }
            out
        };

        let count = (window.end - window.start) as f64;
        let scales = TermScales {
            reach: a_scale * w.reach / count,
            ord: a_scale * w.ord / count,
            rec: r_scale * w.rec / count,
            vel: r_scale * w.vel / count,
            dist: r_scale * w.dist / count,
            dir: r_scale * w.dir / count,
        };
        let outs: Vec<FrameOut> = window
            .clone()
            .into_par_iter()
            .map(|t| self.frame(t, adapted, &kin, &scales, with_gradient))
            .collect();

        let mut joint_grads: Vec<JointGrad> = (0..frames).map(|_| JointGrad::new(joints)).collect();
        for out in &outs {
            report.reach += out.values.reach / count;
            report.ord += out.values.ord / count;
            report.rec += out.values.rec / count;
            report.vel += out.values.vel / count;
            report.dist += out.values.dist / count;
            report.dir += out.values.dir / count;
            report.dir_excluded += out.values.dir_excluded;
            out.fingerprint.hash(&mut hasher);
            if with_gradient {
                for (i, g) in out.g_adapted.iter().enumerate() {
                    g_adapted[i] += g;
                }
                joint_grads[out.t].add(&out.cur);
                if let Some(prev) = &out.prev {
                    joint_grads[out.t - 1].add(prev);
                }
            }
        }
        let report = report.with_totals(w);
        for (name, v) in LossReport::COLUMNS.iter().zip(report.values()) {
            if !v.is_finite() {
                return Err(Error::numerical(*name, format!("loss term is {v}")));
            }
        }

        let gradient = with_gradient.then(|| {
            let mut rotations = Vec::with_capacity(frames);
            let mut root = Vec::with_capacity(frames);
            for (t, jg) in joint_grads.into_iter().enumerate() {
                let (r, tr) = self.pose_gradient(&kin[t], jg);
                rotations.push(r);
                root.push(tr);
            }
            Gradient {
                delta: g_adapted,
                tau: g_tau,
                rotations,
                root,
            }
        });
        Ok(Evaluation {
            report,
            gradient,
            fingerprint: hasher.finish(),
        })
    }

    /// Convert accumulated world-space joint gradients of one frame into
    /// gradients of the pose variables.
    fn pose_gradient(&self, kin: &FrameKinematics, mut g: JointGrad) -> (Vec<Vec3>, Vec3) {
        let joints = self.skeleton.len();
        if kin.heading_ok && g.heading != 0.0 {
            let f: Vec3 = kin.world[0].rotation.column(2).into();
            let s = f.x * f.x + f.z * f.z;
            let gf = Vec3::new(f.z, 0.0, -f.x) * (g.heading / s);
            for r in 0..3 {
                g.rot[0][(r, 2)] += gf[r];
            }
        }
        let mut force = g.pos.clone();
        let mut moment: Vec<Vec3> = (0..joints)
            .map(|j| {
                let x = kin.world[j].translation;
                x.cross(&g.pos[j]) + axial(&(g.rot[j] * kin.world[j].rotation.transpose()))
            })
            .collect();
        for j in (1..joints).rev() {
            let p = self.skeleton.parent(j).expect("non-root joints have parents");
            let (f, m) = (force[j], moment[j]);
            force[p] += f;
            moment[p] += m;
        }
        let rotations = (0..joints)
            .map(|j| {
                let x = kin.world[j].translation;
                let torque = moment[j] - x.cross(&force[j]);
                kin.world[j].rotation.transpose() * torque + axial(&(kin.local[j].transpose() * g.local[j]))
            })
            .collect();
        (rotations, force[0] + g.root)
    }

    fn frame(&self, t: usize, adapted: &[Vec3], kin: &[FrameKinematics], s: &TermScales, with_gradient: bool) -> FrameOut {
        let n = adapted.len();
        let k = &kin[t];
        let joints = self.skeleton.len();
        let src = &self.source[t];
        let refr = &self.reference[t];
        let w = &self.options.weights;
        let mut values = FrameValues::default();
        let mut fp = DefaultHasher::new();
        let mut cur = JointGrad::new(joints);
        let mut prev = (t > 0).then(|| JointGrad::new(joints));

        // deformation of the adapted anchors
        let mut lin = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        let mut raw = Vec::with_capacity(n);
        let mut frames = Vec::with_capacity(n);
        for i in 0..n {
            let mut l = Mat3::zeros();
            let mut off = Vec3::zeros();
            for &(j, wt) in &self.anchor_weights[i] {
                let g = &k.world[j];
                l += g.rotation * wt;
                off += (g.translation - g.rotation * self.rest_joints[j]) * wt;
            }
            pos.push(l * adapted[i] + off);
            let tr = l * self.rest_frames[i].column(0);
            let nr = l * self.rest_frames[i].column(2);
            frames.push(gram_schmidt_frame(&tr, &nr));
            raw.push((tr, nr));
            lin.push(l);
        }

        let mut g_pos = vec![Vec3::zeros(); n];
        let mut g_frame = vec![Mat3::zeros(); n];
        let m_count = self.mask.count();

        // pair terms
        if m_count > 0 {
            let inv_m = 1.0 / m_count as f64;
            let gd_scale = -2.0 * s.dist * inv_m;
            let go_scale = -2.0 * s.ord * inv_m;
            let gh_scale = -s.dir * inv_m;
            let mut dist_sum = 0.0;
            let mut dir_sum = 0.0;
            let mut ord_sum = 0.0;
            let mut excluded = 0usize;
            let mut excluded_list: Vec<u32> = Vec::new();
            for i in 0..n {
                let ai = pos[i];
                let ti = frames[i];
                let ni: Vec3 = ti.column(2).into();
                let mut ga_i = Vec3::zeros();
                let mut gt_i = Mat3::zeros();
                let d_row = src.dist.row(i);
                let w_row = src.weight.row(i);
                let o_row = src.ord.row(i);
                let s_row = src.dir_unit.row(i);
                for j in 0..n {
                    if !self.mask.get(i, j) {
                        continue;
                    }
                    let d = pos[j] - ai;
                    let dist = d.norm();
                    let wij = w_row[j];
                    let rd = d_row[j] - dist;
                    dist_sum += wij * rd * rd;
                    let h = ti.tr_mul(&d);
                    let hn = h.norm();
                    let su = s_row[j];
                    let dir_ok = !(su.x == 0.0 && su.y == 0.0 && su.z == 0.0) && hn > EPS_DIR;
                    let mut cosine = 0.0;
                    if dir_ok {
                        cosine = su.dot(&h) / hn;
                        dir_sum += wij * (1.0 - cosine);
                    } else {
                        excluded += 1;
                        excluded_list.push((i * n + j) as u32);
                    }
                    let o = ni.dot(&d);
                    let ro = o_row[j] - o;
                    ord_sum += wij * ro * ro;
                    if !with_gradient {
                        continue;
                    }
                    let mut gd = Vec3::zeros();
                    if dist > 0.0 {
                        gd += d * (gd_scale * wij * rd / dist);
                    }
                    if dir_ok {
                        let hu = h / hn;
                        let gh = (su - hu * cosine) * (gh_scale * wij / hn);
                        gd += ti * gh;
                        gt_i += d * gh.transpose();
                    }
                    let go = go_scale * wij * ro;
                    gd += ni * go;
                    for r in 0..3 {
                        gt_i[(r, 2)] += go * d[r];
                    }
                    g_pos[j] += gd;
                    ga_i -= gd;
                }
                g_pos[i] += ga_i;
                g_frame[i] += gt_i;
            }
            values.dist = dist_sum * inv_m;
            values.dir = dir_sum * inv_m;
            values.ord = ord_sum * inv_m;
            values.dir_excluded = excluded;
            excluded_list.hash(&mut fp);
        } else {
            log::warn!("pair mask is empty");
        }

        // reachability
        let triples = self.reach.triple_count();
        if triples > 0 {
            let inv_r = 1.0 / triples as f64;
            let mut sum = 0.0;
            let mut active: Vec<u32> = Vec::new();
            for e in 0..4 {
                let xb = k.world[self.reach.ball[e]].translation;
                let len = self.reach.length[e];
                let mut gxb = Vec3::zeros();
                for &j in &self.reach.outside[e] {
                    let d = pos[j] - xb;
                    let dist = d.norm();
                    if dist <= len {
                        continue;
                    }
                    active.push((e * n + j) as u32);
                    let c: f64 = self.reach.effector[e].iter().map(|&i| src.weight.get(i, j)).sum();
                    let ex = dist - len;
                    sum += c * ex * ex;
                    if with_gradient {
                        let g = d * (2.0 * ex * c * inv_r * s.reach / dist);
                        g_pos[j] += g;
                        gxb -= g;
                    }
                }
                cur.pos[self.reach.ball[e]] += gxb;
            }
            values.reach = sum * inv_r;
            active.hash(&mut fp);
        }

        // back through the deformation
        let mut g_adapted = vec![Vec3::zeros(); if with_gradient { n } else { 0 }];
        if with_gradient {
            for i in 0..n {
                let gl = frame_backward(&frames[i], raw[i].0, raw[i].1, &g_frame[i], &self.rest_frames[i]);
                let ga = g_pos[i];
                for &(j, wt) in &self.anchor_weights[i] {
                    cur.rot[j] += (ga * (adapted[i] - self.rest_joints[j]).transpose() + gl) * wt;
                    cur.pos[j] += ga * wt;
                }
                g_adapted[i] = lin[i].tr_mul(&ga);
            }
        }

        // reconstruction
        let mut q_sum = 0.0;
        for j in 0..joints {
            let c = quat_to_6d_matrix(&k.local[j]);
            let mut gl = Mat3::zeros();
            for (e, (cv, rv)) in c.iter().zip(&refr.sixd[j]).enumerate() {
                let r = cv - rv;
                q_sum += r * r;
                gl[(e % 3, e / 3)] = 2.0 * w.q * r * s.rec;
            }
            cur.local[j] += gl;
        }
        let mut p_sum = 0.0;
        for j in 0..joints {
            let r = k.world[j].translation - refr.world[j];
            p_sum += r.norm_squared();
            cur.pos[j] += r * (2.0 * w.p * s.rec);
        }
        let root = root_motion(kin, t);
        let rr = [
            root.dx - refr.root.dx,
            root.dz - refr.root.dz,
            root.dtheta - refr.root.dtheta,
            root.h - refr.root.h,
        ];
        let r_sum: f64 = rr.iter().map(|x| x * x).sum();
        values.rec = w.q * q_sum + w.p * p_sum + w.r * r_sum;
        let gr = rr.map(|x| 2.0 * w.r * s.rec * x);
        cur.root.y += gr[3];
        if let Some(pg) = prev.as_mut() {
            let kp = &kin[t - 1];
            let gd = Vec3::new(gr[0], 0.0, gr[1]);
            let back = rot_y(kp.heading) * gd;
            cur.root += back;
            pg.root -= back;
            let delta = k.root - kp.root;
            pg.heading += gd.dot(&(-rot_y_prime(-kp.heading) * delta));
            cur.heading += gr[2];
            pg.heading -= gr[2];
            let raw_dtheta = k.heading - kp.heading;
            (((raw_dtheta - wrap_angle(raw_dtheta)) / std::f64::consts::TAU).round() as i64).hash(&mut fp);
        }
        k.heading_ok.hash(&mut fp);

        // velocity
        if let Some(pg) = prev.as_mut() {
            let kp = &kin[t - 1];
            let rc = rot_y(-k.heading);
            let rp = rot_y(-kp.heading);
            let bc = Vec3::new(k.root.x, 0.0, k.root.z);
            let bp = Vec3::new(kp.root.x, 0.0, kp.root.z);
            let mut sum = 0.0;
            for j in 0..joints {
                let xc = k.world[j].translation - bc;
                let xp = kp.world[j].translation - bp;
                let v = (rc * xc - rp * xp) / self.dt;
                let r = v - refr.velocities[j];
                sum += r.norm_squared();
                let gp = r * (2.0 * s.vel / self.dt);
                let gw = rc.transpose() * gp;
                cur.pos[j] += gw;
                cur.root -= Vec3::new(gw.x, 0.0, gw.z);
                cur.heading += gp.dot(&(-rot_y_prime(-k.heading) * xc));
                let gw = rp.transpose() * gp;
                pg.pos[j] -= gw;
                pg.root += Vec3::new(gw.x, 0.0, gw.z);
                pg.heading -= gp.dot(&(-rot_y_prime(-kp.heading) * xp));
            }
            values.vel = sum;
        }

        FrameOut {
            t,
            values,
            cur,
            prev,
            g_adapted,
            fingerprint: fp.finish(),
        }
    }
}

/// Root motion of frame `t` relative to frame `t - 1`, as in motion building.
fn root_motion(kin: &[FrameKinematics], t: usize) -> RootMotion {
    let k = &kin[t];
    if t == 0 {
        return RootMotion {
            h: k.root.y,
            ..RootMotion::default()
        };
    }
    let kp = &kin[t - 1];
    let d = rot_y(-kp.heading) * (k.root - kp.root);
    RootMotion {
        dx: d.x,
        dz: d.z,
        dtheta: wrap_angle(k.heading - kp.heading),
        h: k.root.y,
    }
}

fn quat_to_6d_matrix(m: &Mat3) -> [f64; 6] {
    [m[(0, 0)], m[(1, 0)], m[(2, 0)], m[(0, 1)], m[(1, 1)], m[(2, 1)]]
}

/// Pull a gradient on the Gram-Schmidt frame `[t, n x t, n]` back to the
/// blended linear map that produced its raw tangent and normal.
fn frame_backward(frame: &Mat3, t_raw: Vec3, n_raw: Vec3, g: &Mat3, rest: &Mat3) -> Mat3 {
    let t: Vec3 = frame.column(0).into();
    let n: Vec3 = frame.column(2).into();
    let mut gt: Vec3 = g.column(0).into();
    let gb: Vec3 = g.column(1).into();
    let mut gn: Vec3 = g.column(2).into();
    gn += t.cross(&gb);
    gt += gb.cross(&n);
    let m = n_raw - t * t.dot(&n_raw);
    let m_norm = m.norm();
    let gm = (gn - n * gn.dot(&n)) / m_norm;
    let g_nraw = gm - t * gm.dot(&t);
    gt += -n_raw * gm.dot(&t) - gm * n_raw.dot(&t);
    let g_traw = (gt - t * gt.dot(&t)) / t_raw.norm();
    g_traw * rest.column(0).transpose() + g_nraw * rest.column(2).transpose()
}

struct FrameKinematics {
    world: Vec<Rigid>,
    local: Vec<Mat3>,
    heading: f64,
    heading_ok: bool,
    root: Vec3,
}

struct TermScales {
    reach: f64,
    ord: f64,
    rec: f64,
    vel: f64,
    dist: f64,
    dir: f64,
}

#[derive(Default)]
struct FrameValues {
    reach: f64,
    ord: f64,
    rec: f64,
    vel: f64,
    dist: f64,
    dir: f64,
    dir_excluded: usize,
}

/// Gradients with respect to world-space joint quantities of one frame.
#[derive(Clone)]
struct JointGrad {
    pos: Vec<Vec3>,
    rot: Vec<Mat3>,
    local: Vec<Mat3>,
    root: Vec3,
    heading: f64,
}

impl JointGrad {
    fn new(joints: usize) -> Self {
        JointGrad {
            pos: vec![Vec3::zeros(); joints],
            rot: vec![Mat3::zeros(); joints],
            local: vec![Mat3::zeros(); joints],
            root: Vec3::zeros(),
            heading: 0.0,
        }
    }

    fn add(&mut self, o: &JointGrad) {
        for j in 0..self.pos.len() {
            self.pos[j] += o.pos[j];
            self.rot[j] += o.rot[j];
            self.local[j] += o.local[j];
        }
        self.root += o.root;
        self.heading += o.heading;
    }
}

struct FrameOut {
    t: usize,
    values: FrameValues,
    cur: JointGrad,
    prev: Option<JointGrad>,
    g_adapted: Vec<Vec3>,
    fingerprint: u64,
}

struct Simplification {
    value: f64,
    grad: Vec<Vec3>,
    anchor_nn: Vec<usize>,
    vertex_nn: Vec<usize>,
    argmax: usize,
}

impl Hash for Simplification {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.anchor_nn.hash(state);
        self.vertex_nn.hash(state);
        self.argmax.hash(state);
    }
}

fn simplification(adapted: &[Vec3], vertices: &[Vec3], vertex_grid: &VertexGrid) -> Simplification {
    let n = adapted.len();
    let nv = vertices.len();
    let mut grad = vec![Vec3::zeros(); n];
    let mut anchor_nn = Vec::with_capacity(n);
    let mut mean_a = 0.0;
    let mut max_a = (0usize, f64::NEG_INFINITY);
    for (i, a) in adapted.iter().enumerate() {
        let (v, d2) = vertex_grid.nearest(a);
        anchor_nn.push(v);
        mean_a += d2;
        if d2 > max_a.1 {
            max_a = (i, d2);
        }
        grad[i] += (a - vertices[v]) * (2.0 / n as f64);
    }
    let i = max_a.0;
    grad[i] += (adapted[i] - vertices[anchor_nn[i]]) * 2.0;
    let anchor_grid = VertexGrid::new(adapted);
    let mut vertex_nn = Vec::with_capacity(nv);
    let mut mean_v = 0.0;
    for v in vertices {
        let (a, d2) = anchor_grid.nearest(v);
        vertex_nn.push(a);
        mean_v += d2;
        grad[a] += (adapted[a] - v) * (2.0 / nv as f64);
    }
    Simplification {
        value: mean_a / n as f64 + max_a.1 + mean_v / nv as f64,
        grad,
        anchor_nn,
        vertex_nn,
        argmax: max_a.0,
    }
}
