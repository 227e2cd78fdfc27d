use std::fmt::Write as _;
use std::path::Path;

use super::{read_text, write_text};
use crate::character::{build_motion, EndEffector, JointSpec, Motion, Pose, Skeleton};
use crate::error::{Error, Result};
use crate::math::{Mat3, Quat, Vec3};

/// Hierarchy and frames read from a BVH file. `End Site` blocks become
/// leaf joints named `<parent>_end`.
#[derive(Clone, Debug)]
pub struct BvhData {
    pub joints: Vec<JointSpec>,
    pub frame_time: f64,
    pub poses: Vec<Pose>,
}

/// Joint names of the four end-effectors and their ball joints, in
/// [`EndEffector::ALL`] order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LimbNames {
    pub effectors: [String; 4],
    pub balls: [String; 4],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Channel {
    Position(usize),
    Rotation(usize),
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    at: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens { items, at: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.at)
            .or(self.items.last())
            .map_or(1, |&(l, _)| l)
    }

    fn err(&self, detail: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line(),
            detail: detail.into(),
        }
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self
            .items
            .get(self.at)
            .map(|&(_, t)| t)
            .ok_or_else(|| self.err("unexpected end of file"))?;
        self.at += 1;
        Ok(t)
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.at).map(|&(_, t)| t)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let line = self.line();
        let t = self.next()?;
        if t == word {
            Ok(())
        } else {
            Err(Error::Parse {
                line,
                detail: format!("expected {word:?}, found {t:?}"),
            })
        }
    }

    fn number(&mut self) -> Result<f64> {
        let line = self.line();
        let t = self.next()?;
        t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or(Error::Parse {
            line,
            detail: format!("expected a number, found {t:?}"),
        })
    }

    fn count(&mut self) -> Result<usize> {
        let line = self.line();
        let t = self.next()?;
        t.parse::<usize>().map_err(|_| Error::Parse {
            line,
            detail: format!("expected a count, found {t:?}"),
        })
    }
}

struct Node {
    spec: JointSpec,
    channels: Vec<Channel>,
}

fn parse_channels(tok: &mut Tokens) -> Result<Vec<Channel>> {
    let n = tok.count()?;
    let mut out = Vec::with_capacity(n);
    let mut seen_rot = [false; 3];
    for _ in 0..n {
        let line = tok.line();
        let name = tok.next()?;
        let axis = match name.chars().next().map(|c| c.to_ascii_uppercase()) {
            Some('X') => 0,
            Some('Y') => 1,
            Some('Z') => 2,
            _ => usize::MAX,
        };
        let kind = name.get(1..).map(str::to_ascii_lowercase);
        let ch = match (axis, kind.as_deref()) {
            (a, Some("position")) if a < 3 => Channel::Position(a),
            (a, Some("rotation")) if a < 3 => {
                if seen_rot[a] {
                    return Err(Error::Parse {
                        line,
                        detail: format!("unsupported channel order: {name} appears twice"),
                    });
                }
                seen_rot[a] = true;
                Channel::Rotation(a)
            }
            _ => {
                return Err(Error::Parse {
                    line,
                    detail: format!("unsupported channel {name:?}"),
                })
            }
        };
        out.push(ch);
    }
    Ok(out)
}

fn parse_joint(tok: &mut Tokens, name: String, parent: Option<usize>, nodes: &mut Vec<Node>) -> Result<()> {
    tok.expect("{")?;
    tok.expect("OFFSET")?;
    let offset = Vec3::new(tok.number()?, tok.number()?, tok.number()?);
    let channels = if tok.peek() == Some("CHANNELS") {
        tok.next()?;
        parse_channels(tok)?
    } else {
        Vec::new()
    };
    let me = nodes.len();
    nodes.push(Node {
        spec: JointSpec::new(name.clone(), parent, offset),
        channels,
    });
    loop {
        let line = tok.line();
        match tok.next()? {
            "}" => return Ok(()),
            "JOINT" => {
                let child = tok.next()?.to_string();
                parse_joint(tok, child, Some(me), nodes)?;
            }
            "End" => {
                tok.expect("Site")?;
                tok.expect("{")?;
                tok.expect("OFFSET")?;
                let offset = Vec3::new(tok.number()?, tok.number()?, tok.number()?);
                tok.expect("}")?;
                nodes.push(Node {
                    spec: JointSpec::new(format!("{name}_end"), Some(me), offset),
                    channels: Vec::new(),
                });
            }
            other => {
                return Err(Error::Parse {
                    line,
                    detail: format!("unexpected token {other:?} in joint {name:?}"),
                })
            }
        }
    }
}

fn axis_rotation(axis: usize, degrees: f64) -> Quat {
    let a = [Vec3::x_axis(), Vec3::y_axis(), Vec3::z_axis()][axis];
    Quat::from_axis_angle(&a, degrees.to_radians())
}

/// Parse BVH text. Rotation channels compose in their declared order
/// (the first listed is outermost); angles are in degrees.
pub fn parse_bvh(text: &str) -> Result<BvhData> {
    let mut tok = Tokens::new(text);
    tok.expect("HIERARCHY")?;
    tok.expect("ROOT")?;
    let root = tok.next()?.to_string();
    let mut nodes = Vec::new();
    parse_joint(&mut tok, root, None, &mut nodes)?;
    tok.expect("MOTION")?;
    tok.expect("Frames:")?;
    let frames = tok.count()?;
    tok.expect("Frame")?;
    tok.expect("Time:")?;
    let line = tok.line();
    let frame_time = tok.number()?;
    if !(frame_time > 0.0) {
        return Err(Error::Parse {
            line,
            detail: format!("frame time must be positive, got {frame_time}"),
        });
    }
    let mut warned = false;
    let mut poses = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut pose = Pose::identity(nodes.len(), nodes[0].spec.offset);
        for (j, node) in nodes.iter().enumerate() {
            let mut q = Quat::identity();
            let mut pos = node.spec.offset;
            for &ch in &node.channels {
                let v = tok.number()?;
                match ch {
                    Channel::Rotation(a) => q *= axis_rotation(a, v),
                    Channel::Position(a) => pos[a] = v,
                }
            }
            pose.rotations[j] = q;
            if j == 0 {
                pose.root_position = pos;
            } else if !warned && node.channels.iter().any(|c| matches!(c, Channel::Position(_))) {
                log::warn!("position channels on non-root joints are ignored");
                warned = true;
            }
        }
        poses.push(pose);
    }
    if let Some(extra) = tok.peek() {
        return Err(tok.err(format!("trailing data after {frames} frames: {extra:?}")));
    }
    Ok(BvhData {
        joints: nodes.into_iter().map(|n| n.spec).collect(),
        frame_time,
        poses,
    })
}

pub fn import_bvh(path: &Path) -> Result<BvhData> {
    parse_bvh(&read_text(path)?).map_err(|e| match e {
        Error::Parse { line, detail } => Error::Parse {
            line,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

fn normalized(name: &str) -> String {
    let base = name.rsplit(':').next().unwrap_or(name);
    base.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl BvhData {
    /// Find limb joints by common naming conventions (`LeftHand`,
    /// `mixamorig:LeftArm`, `l_hand`, `hand_l`, ...).
    pub fn guess_limbs(&self) -> Result<LimbNames> {
        let names: Vec<String> = self.joints.iter().map(|j| normalized(&j.name)).collect();
        let find = |candidates: &[String]| {
            candidates
                .iter()
                .find_map(|c| names.iter().position(|n| n == c))
                .map(|i| self.joints[i].name.clone())
        };
        let mut effectors: [String; 4] = Default::default();
        let mut balls: [String; 4] = Default::default();
        for e in EndEffector::ALL {
            let (side, s) = match e {
                EndEffector::LeftHand | EndEffector::LeftFoot => ("left", "l"),
                _ => ("right", "r"),
            };
            let (eff, ball): (&[&str], &[&str]) = match e {
                EndEffector::LeftHand | EndEffector::RightHand => {
                    (&["hand", "wrist"], &["arm", "upperarm", "shoulder"])
                }
                _ => (&["foot", "ankle"], &["upleg", "upperleg", "thigh", "hip"]),
            };
            let variants = |stems: &[&str]| -> Vec<String> {
                stems
                    .iter()
                    .flat_map(|stem| [format!("{side}{stem}"), format!("{s}{stem}"), format!("{stem}{s}"), format!("{stem}{side}")])
                    .collect()
            };
            let missing = |what: &str| Error::validation(format!("cannot find the {what} joint of {e} by name"));
            effectors[e.index()] = find(&variants(eff)).ok_or_else(|| missing("end-effector"))?;
            balls[e.index()] = find(&variants(ball)).ok_or_else(|| missing("ball"))?;
        }
        Ok(LimbNames { effectors, balls })
    }

    pub fn skeleton(&self, limbs: &LimbNames) -> Result<Skeleton> {
        let index = |n: &str| {
            self.joints
                .iter()
                .position(|j| j.name == n)
                .ok_or_else(|| Error::structural(format!("no joint named {n:?}")))
        };
        let mut eff = [0; 4];
        let mut ball = [0; 4];
        for k in 0..4 {
            eff[k] = index(&limbs.effectors[k])?;
            ball[k] = index(&limbs.balls[k])?;
        }
        Skeleton::new(self.joints.clone(), eff, ball)
    }

    pub fn motion(&self, skeleton: &Skeleton) -> Result<Motion> {
        build_motion(skeleton, self.poses.clone(), self.frame_time, None)
    }
}

/// Decompose `R = Rz(z) Rx(x) Ry(y)`; returns degrees `[z, x, y]`.
fn zxy_degrees(q: &Quat) -> [f64; 3] {
    let r: Mat3 = *q.to_rotation_matrix().matrix();
    let x = r[(2, 1)].clamp(-1.0, 1.0).asin();
    let (z, y) = if x.cos().abs() > 1e-12 {
        ((-r[(0, 1)]).atan2(r[(1, 1)]), (-r[(2, 0)]).atan2(r[(2, 2)]))
    } else {
        (r[(1, 0)].atan2(r[(0, 0)]), 0.0)
    };
    [z.to_degrees(), x.to_degrees(), y.to_degrees()]
}

/// BVH text for a motion. Leaf joints become `End Site` blocks; the root
/// carries `Xposition Yposition Zposition Zrotation Xrotation Yrotation`,
/// other joints `Zrotation Xrotation Yrotation`.
pub fn write_bvh(skeleton: &Skeleton, motion: &Motion) -> String {
    fn block(sk: &Skeleton, j: usize, depth: usize, out: &mut String) {
        let pad = "  ".repeat(depth);
        let o = sk.joint(j).offset;
        if j == 0 {
            let _ = writeln!(out, "ROOT {}", sk.joint(j).name);
        } else if sk.children(j).is_empty() {
            let _ = writeln!(out, "{pad}End Site\n{pad}{{\n{pad}  OFFSET {} {} {}\n{pad}}}", o.x, o.y, o.z);
            return;
        } else {
            let _ = writeln!(out, "{pad}JOINT {}", sk.joint(j).name);
        }
        let _ = writeln!(out, "{pad}{{\n{pad}  OFFSET {} {} {}", o.x, o.y, o.z);
        if j == 0 {
            let _ = writeln!(out, "{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation");
        } else {
            let _ = writeln!(out, "{pad}  CHANNELS 3 Zrotation Xrotation Yrotation");
        }
        for &c in sk.children(j) {
            block(sk, c, depth + 1, out);
        }
        let _ = writeln!(out, "{pad}}}");
    }
    let mut out = String::from("HIERARCHY\n");
    block(skeleton, 0, 0, &mut out);
    let _ = writeln!(out, "MOTION\nFrames: {}\nFrame Time: {}", motion.len(), motion.dt);
    for f in &motion.frames {
        let mut row: Vec<String> = f.pose.root_position.iter().map(|v| v.to_string()).collect();
        for j in 0..skeleton.len() {
            if j == 0 || !skeleton.children(j).is_empty() {
                row.extend(zxy_degrees(&f.pose.rotations[j]).iter().map(|v| v.to_string()));
            }
        }
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn export_bvh(path: &Path, skeleton: &Skeleton, motion: &Motion) -> Result<()> {
    write_text(path, &write_bvh(skeleton, motion))
}
