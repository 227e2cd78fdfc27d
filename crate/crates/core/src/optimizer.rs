//! Direct optimization of anchor displacements, projection temperature and
//! target poses with an alternating two-step schedule.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::character::{build_motion, Character, Motion, Pose};
use crate::error::{Error, Result};
use crate::math::{Quat, Vec3};
use crate::objectives::{LossReport, Objective, Scene};
use crate::projection::TAU_MIN;

/// Parameter update rule shared by both steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpdateRule {
    /// Adam with bias correction.
    #[default]
    Adam,
    /// Plain gradient descent.
    Gd,
    /// Heavy-ball momentum.
    Momentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub steps: usize,
    pub lr_anchor: f64,
    pub lr_pose: f64,
    pub tau_init: f64,
    pub rule: UpdateRule,
    /// Momentum coefficient of [`UpdateRule::Momentum`].
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Frames per step; `None` uses the whole sequence.
    pub window: Option<usize>,
    pub seed: u64,
    /// Keep the anchors at their extracted positions (no anchor step).
    pub freeze_anchors: bool,
    /// Abort when the total loss exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            steps: 500,
            lr_anchor: 0.001,
            lr_pose: 0.001,
            tau_init: 1.0,
            rule: UpdateRule::Adam,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            window: None,
            seed: 0,
            freeze_anchors: false,
            divergence_factor: 1e6,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_anchor > 0.0 && self.lr_pose > 0.0) {
            return Err(Error::config("learning rates must be positive"));
        }
        if !(self.tau_init >= TAU_MIN) {
            return Err(Error::config(format!("initial temperature must be at least {TAU_MIN}")));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("momentum coefficients must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("epsilon must be positive"));
        }
        if self.window == Some(0) {
            return Err(Error::config("window must hold at least one frame"));
        }
        if !(self.divergence_factor > 1.0) {
            return Err(Error::config("divergence factor must exceed 1"));
        }
        Ok(())
    }
}

/// First and second moment buffers of a flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Moments {
    fn new(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Turn a gradient into a descent step (to be subtracted).
    fn step(&mut self, grad: &[f64], lr: f64, config: &OptimConfig) -> Vec<f64> {
        self.t += 1;
        match config.rule {
            UpdateRule::Gd => grad.iter().map(|g| lr * g).collect(),
            UpdateRule::Momentum => {
                for (m, g) in self.m.iter_mut().zip(grad) {
                    *m = config.momentum * *m + g;
                }
                self.m.iter().map(|m| lr * m).collect()
            }
            UpdateRule::Adam => {
                let (b1, b2) = (config.beta1, config.beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                grad.iter()
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                    .map(|(g, (m, v))| {
                        *m = b1 * *m + (1.0 - b1) * g;
                        *v = b2 * *v + (1.0 - b2) * g * g;
                        lr * (*m / c1) / ((*v / c2).sqrt() + config.epsilon)
                    })
                    .collect()
            }
        }
    }
}

/// The optimized variables and the update-rule buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    /// Per-anchor displacement from the extracted rest anchors.
    pub delta: Vec<Vec3>,
    pub tau: f64,
    pub poses: Vec<Pose>,
    /// Completed iterations.
    pub step: usize,
    anchor_moments: Moments,
    pose_moments: Moments,
}

impl OptimState {
    fn new(anchors: usize, tau: f64, poses: Vec<Pose>) -> Self {
        let joints = poses.first().map_or(0, |p| p.rotations.len());
        let pose_vars = poses.len() * (joints + 1) * 3;
        OptimState {
            delta: vec![Vec3::zeros(); anchors],
            tau,
            step: 0,
            anchor_moments: Moments::new(anchors * 3 + 1),
            pose_moments: Moments::new(pose_vars),
            poses,
        }
    }
}

/// Naive copy of the source motion onto the target skeleton: local
/// rotations are copied and the root trajectory is scaled by the ratio of
/// leg lengths.
pub fn initial_poses(source: &Character, source_motion: &Motion, target: &Character) -> Result<Vec<Pose>> {
    source.skeleton.check_same_topology(&target.skeleton)?;
    let ratio = target.skeleton.leg_length()? / source.skeleton.leg_length()?;
    Ok(source_motion
        .frames
        .iter()
        .map(|f| Pose {
            rotations: f.pose.rotations.clone(),
            root_position: f.pose.root_position * ratio,
        })
        .collect())
}

/// Build the initial state and the reference motion used by the
/// reconstruction terms (the naive copy itself).
pub fn initialize(
    source: &Character,
    source_motion: &Motion,
    target: &Character,
    config: &OptimConfig,
) -> Result<(OptimState, Motion)> {
    config.validate()?;
    let poses = initial_poses(source, source_motion, target)?;
    let contacts = source_motion.frames.iter().map(|f| f.contacts.clone()).collect();
    let reference = build_motion(&target.skeleton, poses.clone(), source_motion.dt, Some(contacts))?;
    let anchors = target.anchor_set()?.len();
    Ok((OptimState::new(anchors, config.tau_init, poses), reference))
}

/// Window of frames used at iteration `step`.
pub fn step_window(config: &OptimConfig, frames: usize, step: usize) -> std::ops::Range<usize> {
    match config.window {
        Some(w) if w < frames => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(step as u64);
            let start = rng.random_range(0..=frames - w);
            start..start + w
        }
        _ => 0..frames,
    }
}

/// Update the anchor displacements and the temperature. Poses are not
/// touched. Returns the losses at the state before the update.
pub fn anchor_step(state: &mut OptimState, scene: &Scene, config: &OptimConfig) -> Result<LossReport> {
    let window = step_window(config, scene.frame_count(), state.step);
    let eval = scene.evaluate(&state.delta, state.tau, &state.poses, Objective::Total, window, true)?;
    let g = eval.gradient.expect("gradient requested");
    let mut flat: Vec<f64> = g.delta.iter().flat_map(|v| v.iter().copied()).collect();
    flat.push(g.tau);
    let update = state.anchor_moments.step(&flat, config.lr_anchor, config);
    for (i, d) in state.delta.iter_mut().enumerate() {
        for c in 0..3 {
            d[c] -= update[i * 3 + c];
        }
    }
    state.tau = (state.tau - update[flat.len() - 1]).max(TAU_MIN);
    Ok(eval.report)
}

/// Update the poses with the anchors held fixed. Returns the losses at
/// the state before the update.
pub fn pose_step(state: &mut OptimState, scene: &Scene, config: &OptimConfig) -> Result<LossReport> {
    let window = step_window(config, scene.frame_count(), state.step);
    let eval = scene.evaluate(&state.delta, state.tau, &state.poses, Objective::Total, window, true)?;
    let g = eval.gradient.expect("gradient requested");
    let flat: Vec<f64> = g
        .rotations
        .iter()
        .zip(&g.root)
        .flat_map(|(rots, root)| rots.iter().chain(std::iter::once(root)).flat_map(|v| v.iter().copied()))
        .collect();
    let update = state.pose_moments.step(&flat, config.lr_pose, config);
    let mut k = 0;
    let mut next = |u: &[f64]| {
        let v = Vec3::new(u[k], u[k + 1], u[k + 2]);
        k += 3;
        v
    };
    for pose in state.poses.iter_mut() {
        for q in pose.rotations.iter_mut() {
            let w = next(&update);
            if w != Vec3::zeros() {
                *q = Quat::new_normalize(*(*q * Quat::from_scaled_axis(-w)).quaternion());
            }
        }
        pose.root_position -= next(&update);
    }
    Ok(eval.report)
}

/// Output of a retargeting run.
#[derive(Clone, Debug)]
pub struct RetargetResult {
    pub poses: Vec<Pose>,
    pub motion: Motion,
    pub delta: Vec<Vec3>,
    pub tau: f64,
    /// Rest-pose adapted anchors after hard projection.
    pub anchors: Vec<Vec3>,
    /// Mesh vertex behind each hard-projected anchor.
    pub anchor_vertices: Vec<usize>,
    /// Losses at the start of every iteration.
    pub trace: Vec<LossReport>,
    /// Losses of the final poses with the hard-projected anchors.
    pub final_report: LossReport,
    pub wall_time: Duration,
}

/// Optional per-step hook: receives the state after each completed
/// iteration (for checkpointing or progress reports).
pub type StepHook<'a> = dyn FnMut(&OptimState, &[LossReport]) -> Result<()> + 'a;

/// Run the alternating schedule for `config.steps` iterations from `state`
/// (which may come from a checkpoint; `trace` holds its earlier rows).
pub fn run_from(
    scene: &Scene,
    config: &OptimConfig,
    mut state: OptimState,
    mut trace: Vec<LossReport>,
    hook: Option<&mut StepHook>,
) -> Result<RetargetResult> {
    config.validate()?;
    let start = Instant::now();
    let mut hook = hook;
    let mut initial = trace.first().map(|r| r.total());
    while state.step < config.steps {
        let report = if config.freeze_anchors {
            let window = step_window(config, scene.frame_count(), state.step);
            scene
                .evaluate(&state.delta, state.tau, &state.poses, Objective::Total, window, false)?
                .report
        } else {
            anchor_step(&mut state, scene, config)?
        };
        let total = report.total();
        let reference = *initial.get_or_insert(total);
        if total > config.divergence_factor * reference.max(1e-6) {
            return Err(Error::numerical(
                "total",
                format!("loss {total:e} at step {} exceeds {} times the initial {reference:e}", state.step, config.divergence_factor),
            ));
        }
        trace.push(report);
        pose_step(&mut state, scene, config)?;
        state.step += 1;
        if let Some(h) = hook.as_deref_mut() {
            h(&state, &trace)?;
        }
    }
    finish(scene, state, trace, start.elapsed())
}

/// Run the full schedule from the naive-copy initialization.
pub fn run(scene: &Scene, config: &OptimConfig, initial: OptimState) -> Result<RetargetResult> {
    run_from(scene, config, initial, Vec::new(), None)
}

fn finish(scene: &Scene, state: OptimState, trace: Vec<LossReport>, elapsed: Duration) -> Result<RetargetResult> {
    let moved: Vec<Vec3> = scene.rest_anchors().iter().zip(&state.delta).map(|(a, d)| a + d).collect();
    let (anchors, anchor_vertices) = scene.projector().hard(&moved)?;
    let final_report = scene.report_for_anchors(&anchors, state.tau, &state.poses)?;
    let motion = build_motion(scene.skeleton(), state.poses.clone(), scene.dt(), None)?;
    Ok(RetargetResult {
        poses: state.poses,
        motion,
        delta: state.delta,
        tau: state.tau,
        anchors,
        anchor_vertices,
        trace,
        final_report,
        wall_time: elapsed,
    })
}

/// Write the loss trace as CSV: one header row, one row per iteration.
pub fn write_trace(path: &Path, trace: &[LossReport]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(out, "step,{}", LossReport::COLUMNS.join(","))?;
        for (i, r) in trace.iter().enumerate() {
            write!(out, "{i}")?;
            for v in r.values() {
                write!(out, ",{v:?}")?;
            }
            writeln!(out)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Parse a trace written by [`write_trace`] back into rows of the 11
/// columns.
pub fn read_trace(path: &Path) -> Result<Vec<[f64; 11]>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(Error::Parse {
                line: n + 1,
                detail: format!("expected 12 fields, found {}", fields.len()),
            });
        }
        let mut row = [0.0; 11];
        for (k, f) in fields[1..].iter().enumerate() {
            row[k] = f.parse().map_err(|_| Error::Parse {
                line: n + 1,
                detail: format!("bad number {f:?}"),
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    step: usize,
    anchors: usize,
    frames: usize,
    joints: usize,
    anchor_t: u64,
    pose_t: u64,
    trace: Vec<LossReport>,
}

/// Save a state and the trace so far: one JSON header line followed by
/// little-endian f64 data (displacements, temperature, poses as w x y z
/// and root, then the moment buffers).
pub fn save_checkpoint(path: &Path, state: &OptimState, trace: &[LossReport]) -> Result<()> {
    let header = CheckpointHeader {
        step: state.step,
        anchors: state.delta.len(),
        frames: state.poses.len(),
        joints: state.poses.first().map_or(0, |p| p.rotations.len()),
        anchor_t: state.anchor_moments.t,
        pose_t: state.pose_moments.t,
        trace: trace.to_vec(),
    };
    let mut data: Vec<f64> = state.delta.iter().flat_map(|v| v.iter().copied()).collect();
    data.push(state.tau);
    for p in &state.poses {
        for q in &p.rotations {
            data.extend([q.w, q.i, q.j, q.k]);
        }
        data.extend(p.root_position.iter().copied());
    }
    for m in [&state.anchor_moments, &state.pose_moments] {
        data.extend(&m.m);
        data.extend(&m.v);
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, &header)?;
        out.write_all(b"\n")?;
        for v in &data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(OptimState, Vec<LossReport>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(&line).map_err(|e| Error::Schema {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunks of 8")))
        .collect();
    let (n, f, j) = (header.anchors, header.frames, header.joints);
    let anchor_vars = n * 3 + 1;
    let pose_vars = f * (j + 1) * 3;
    let expected = anchor_vars + f * (j * 4 + 3) + 2 * anchor_vars + 2 * pose_vars;
    if values.len() != expected || bytes.len() % 8 != 0 {
        return Err(Error::Schema {
            path: path.display().to_string(),
            detail: format!("expected {expected} values, found {}", values.len()),
        });
    }
    let mut it = values.into_iter();
    let mut take = |k: usize| -> Vec<f64> { it.by_ref().take(k).collect() };
    let d = take(n * 3);
    let delta = d.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    let tau = take(1)[0];
    let mut poses = Vec::with_capacity(f);
    for _ in 0..f {
        let r = take(j * 4);
        let rotations = r
            .chunks(4)
            .map(|c| Quat::new_unchecked(nalgebra::Quaternion::new(c[0], c[1], c[2], c[3])))
            .collect();
        let t = take(3);
        poses.push(Pose {
            rotations,
            root_position: Vec3::new(t[0], t[1], t[2]),
        });
    }
    let anchor_moments = Moments {
        m: take(anchor_vars),
        v: take(anchor_vars),
        t: header.anchor_t,
    };
    let pose_moments = Moments {
        m: take(pose_vars),
        v: take(pose_vars),
        t: header.pose_t,
    };
    Ok((
        OptimState {
            delta,
            tau,
            poses,
            step: header.step,
            anchor_moments,
            pose_moments,
        },
        header.trace,
    ))
}
