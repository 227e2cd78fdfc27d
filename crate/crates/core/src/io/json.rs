use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{canonical_fps, from_json, read_text, write_text};
use crate::anchors::{Anchor, AnchorSet};
use crate::character::{build_motion, BodyParts, Character, EndEffector, JointSpec, Mesh, Motion, Pose, Skeleton, SkinWeights};
use crate::error::{Error, Result};
use crate::math::{quat_from_6d, Mat3, Quat, Vec3};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CharacterDoc {
    #[serde(default)]
    name: String,
    skeleton: Vec<JointDoc>,
    end_effectors: BTreeMap<String, LimbDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    body_parts: Option<PartsDoc>,
    mesh: MeshDoc,
    skin_weights: Vec<Vec<(usize, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    anchors: Option<AnchorSetDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    parent: Option<String>,
    offset: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LimbDoc {
    effector: String,
    ball: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartsDoc {
    /// Joint name -> part name.
    labels: BTreeMap<String, String>,
    limbs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeshDoc {
    vertices: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorSetDoc {
    samples_per_bone: usize,
    rays_per_sample: usize,
    anchors: Vec<AnchorDoc>,
    parts: Vec<usize>,
    weights: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnchorDoc {
    bone: [usize; 2],
    sample: usize,
    ray: usize,
    face: usize,
    bary: [f64; 3],
    position: [f64; 3],
    /// Columns: tangent, bitangent, normal.
    frame: [[f64; 3]; 3],
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn arr(v: &Vec3) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn to_doc(c: &Character) -> CharacterDoc {
    let sk = &c.skeleton;
    let skeleton = sk
        .joints()
        .iter()
        .map(|j| JointDoc {
            name: j.name.clone(),
            parent: j.parent.map(|p| sk.joint(p).name.clone()),
            offset: arr(&j.offset),
        })
        .collect();
    let end_effectors = EndEffector::ALL
        .iter()
        .map(|&e| {
            (
                e.code().to_string(),
                LimbDoc {
                    effector: sk.joint(sk.end_effector(e)).name.clone(),
                    ball: sk.joint(sk.ball_joint(e)).name.clone(),
                },
            )
        })
        .collect();
    let anchors = c.anchors.as_ref().map(|set| AnchorSetDoc {
        samples_per_bone: set.samples_per_bone,
        rays_per_sample: set.rays_per_sample,
        anchors: set
            .anchors
            .iter()
            .map(|a| AnchorDoc {
                bone: [a.bone.0, a.bone.1],
                sample: a.sample,
                ray: a.ray,
                face: a.face,
                bary: a.bary,
                position: arr(&a.rest_position),
                frame: [0, 1, 2].map(|k| arr(&a.frame.column(k).into_owned())),
            })
            .collect(),
        parts: set.parts.clone(),
        weights: set.weights.clone(),
    });
    CharacterDoc {
        name: c.name.clone(),
        skeleton,
        end_effectors,
        body_parts: Some(PartsDoc {
            labels: c.parts.joint_labels(sk),
            limbs: c.parts.limb_names(),
        }),
        mesh: MeshDoc {
            vertices: c.mesh.vertices.iter().map(arr).collect(),
            faces: c.mesh.faces.clone(),
        },
        skin_weights: c.weights.per_point.clone(),
        anchors,
    }
}

fn from_doc(doc: CharacterDoc) -> Result<Character> {
    let index: BTreeMap<&str, usize> = doc.skeleton.iter().enumerate().map(|(i, j)| (j.name.as_str(), i)).collect();
    let lookup = |name: &str, what: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::structural(format!("{what} refers to unknown joint {name:?}")))
    };
    let mut specs = Vec::with_capacity(doc.skeleton.len());
    for j in &doc.skeleton {
        let parent = match &j.parent {
            Some(p) => Some(lookup(p, &format!("parent of joint {:?}", j.name))?),
            None => None,
        };
        specs.push(JointSpec::new(j.name.clone(), parent, v3(j.offset)));
    }
    let mut effectors = [0; 4];
    let mut balls = [0; 4];
    for e in EndEffector::ALL {
        let limb = doc
            .end_effectors
            .get(e.code())
            .ok_or_else(|| Error::Schema {
                path: format!("end_effectors.{}", e.code()),
                detail: "missing end-effector".into(),
            })?;
        effectors[e.index()] = lookup(&limb.effector, &format!("end-effector {e}"))?;
        balls[e.index()] = lookup(&limb.ball, &format!("ball joint of {e}"))?;
    }
    if let Some(extra) = doc.end_effectors.keys().find(|k| EndEffector::from_code(k).is_none()) {
        return Err(Error::Schema {
            path: format!("end_effectors.{extra}"),
            detail: "unknown end-effector (expected lh, rh, lf or rf)".into(),
        });
    }
    let skeleton = Skeleton::new(specs, effectors, balls)?;
    let parts = match &doc.body_parts {
        None => BodyParts::default_for(&skeleton),
        Some(p) => {
            let labels = skeleton
                .joints()
                .iter()
                .map(|j| {
                    p.labels.get(&j.name).cloned().ok_or_else(|| {
                        Error::validation(format!("joint {:?} has no body-part label", j.name))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if let Some(extra) = p.labels.keys().find(|k| !index.contains_key(k.as_str())) {
                return Err(Error::structural(format!("body-part label for unknown joint {extra:?}")));
            }
            BodyParts::new(&labels, &p.limbs)?
        }
    };
    let mesh = Mesh::new(doc.mesh.vertices.into_iter().map(v3).collect(), doc.mesh.faces)?;
    let weights = SkinWeights::new(doc.skin_weights, skeleton.len())?;
    let mut character = Character::new(doc.name, skeleton, mesh, weights, parts)?;
    if let Some(a) = doc.anchors {
        let set = AnchorSet {
            anchors: a
                .anchors
                .into_iter()
                .map(|d| Anchor {
                    bone: (d.bone[0], d.bone[1]),
                    sample: d.sample,
                    ray: d.ray,
                    face: d.face,
                    bary: d.bary,
                    rest_position: v3(d.position),
                    frame: Mat3::from_columns(&d.frame.map(v3)),
                })
                .collect(),
            samples_per_bone: a.samples_per_bone,
            rays_per_sample: a.rays_per_sample,
            parts: a.parts,
            weights: a.weights,
        };
        set.validate(&character)?;
        character.anchors = Some(set);
    }
    Ok(character)
}

/// Parse and fully validate a character document.
pub fn character_from_str(text: &str) -> Result<Character> {
    from_doc(from_json(text)?)
}

/// Canonical JSON form of a character.
pub fn character_to_string(character: &Character) -> String {
    serde_json::to_string(&to_doc(character)).expect("character documents serialize")
}

pub fn load_character(path: &Path) -> Result<Character> {
    character_from_str(&read_text(path)?).map_err(|e| with_path(e, path))
}

pub fn save_character(path: &Path, character: &Character) -> Result<()> {
    write_text(path, &character_to_string(character))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { .. } => e,
        Error::Parse { line, detail } => Error::Parse {
            line,
            detail: format!("{}: {detail}", path.display()),
        },
        Error::Schema { path: p, detail } => Error::Schema {
            path: p,
            detail: format!("{detail} (in {})", path.display()),
        },
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        Error::Structural(m) => Error::Structural(format!("{}: {m}", path.display())),
        other => other,
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MotionDoc {
    fps: f64,
    frames: Vec<FrameDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    /// `[w, x, y, z]` quaternions or 6D encodings, one per joint.
    rotations: Vec<Vec<f64>>,
    root: RootDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    contacts: Option<Vec<bool>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RootDoc {
    pos: [f64; 3],
}

fn decode_rotation(r: &[f64], frame: usize, joint: usize) -> Result<Quat> {
    let schema = |detail: String| Error::Schema {
        path: format!("frames[{frame}].rotations[{joint}]"),
        detail,
    };
    if r.iter().any(|v| !v.is_finite()) {
        return Err(schema("non-finite rotation component".into()));
    }
    match r.len() {
        4 => {
            let q = nalgebra::Quaternion::new(r[0], r[1], r[2], r[3]);
            let n = q.norm();
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "frame {frame}, joint {joint}: quaternion norm {n} is not 1"
                )));
            }
            // values already unit to rounding are kept bit-exact
            if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
                Ok(Quat::new_unchecked(q))
            } else {
                Ok(Quat::new_normalize(q))
            }
        }
        6 => {
            let v: [f64; 6] = r.try_into().expect("length checked");
            quat_from_6d(&v).ok_or_else(|| schema("degenerate 6D rotation".into()))
        }
        n => Err(schema(format!("expected 4 (quaternion) or 6 (6D) numbers, got {n}"))),
    }
}

/// Parse a motion document against a skeleton.
pub fn motion_from_str(text: &str, skeleton: &Skeleton) -> Result<Motion> {
    let doc: MotionDoc = from_json(text)?;
    if !(doc.fps > 0.0) || !doc.fps.is_finite() {
        return Err(Error::validation(format!("fps must be positive, got {}", doc.fps)));
    }
    let mut poses = Vec::with_capacity(doc.frames.len());
    let has_contacts = doc.frames.first().is_some_and(|f| f.contacts.is_some());
    let mut contacts = Vec::new();
    for (t, f) in doc.frames.iter().enumerate() {
        if f.rotations.len() != skeleton.len() {
            return Err(Error::structural(format!(
                "frame {t} has {} rotations for {} joints",
                f.rotations.len(),
                skeleton.len()
            )));
        }
        let rotations = f
            .rotations
            .iter()
            .enumerate()
            .map(|(j, r)| decode_rotation(r, t, j))
            .collect::<Result<Vec<_>>>()?;
        if f.root.pos.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("frame {t}: root position is not finite")));
        }
        poses.push(Pose {
            rotations,
            root_position: v3(f.root.pos),
        });
        match (&f.contacts, has_contacts) {
            (Some(c), true) if c.len() == skeleton.len() => contacts.push(c.clone()),
            (None, false) => {}
            _ => {
                return Err(Error::Schema {
                    path: format!("frames[{t}].contacts"),
                    detail: "contacts must be given for every frame or none, one flag per joint".into(),
                })
            }
        }
    }
    let motion = build_motion(skeleton, poses, 1.0 / doc.fps, has_contacts.then_some(contacts))?;
    for f in &motion.frames {
        f.validate(skeleton.len())?;
    }
    Ok(motion)
}

/// Canonical JSON form of a motion (quaternion rotations).
pub fn motion_to_string(motion: &Motion) -> String {
    let any_contact = motion.frames.iter().any(|f| f.contacts.iter().any(|&c| c));
    let doc = MotionDoc {
        fps: canonical_fps(motion.dt),
        frames: motion
            .frames
            .iter()
            .map(|f| FrameDoc {
                rotations: f
                    .pose
                    .rotations
                    .iter()
                    .map(|q| vec![q.w, q.i, q.j, q.k])
                    .collect(),
                root: RootDoc {
                    pos: arr(&f.pose.root_position),
                },
                contacts: any_contact.then(|| f.contacts.clone()),
            })
            .collect(),
    };
    serde_json::to_string(&doc).expect("motion documents serialize")
}

pub fn load_motion(path: &Path, skeleton: &Skeleton) -> Result<Motion> {
    motion_from_str(&read_text(path)?, skeleton).map_err(|e| with_path(e, path))
}

pub fn save_motion(path: &Path, motion: &Motion) -> Result<()> {
    write_text(path, &motion_to_string(motion))
}
