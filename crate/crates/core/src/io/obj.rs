use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{read_text, write_text};
use crate::anchors::deform_points;
use crate::character::skinning::skinning_transforms;
use crate::character::{forward_kinematics, linear_blend_skinning, Character, Pose};
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Files written by [`export_obj_sequence`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ObjExport {
    pub meshes: Vec<PathBuf>,
    pub anchors: Vec<PathBuf>,
}

/// Wavefront OBJ text: `v` lines, then 1-based `f` lines.
pub fn write_obj(vertices: &[Vec3], faces: &[[usize; 3]]) -> String {
    let mut out = String::new();
    for v in vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

/// Read vertices and triangles from OBJ text. Faces may use the `v/vt/vn`
/// forms; polygons are fanned into triangles; other records are skipped.
pub fn parse_obj(text: &str) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let err = |detail: String| Error::Parse { line: i + 1, detail };
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad coordinate {t:?}"))))
                    .collect::<Result<_>>()?;
                if c.len() != 3 {
                    return Err(err("vertex needs three coordinates".into()));
                }
                vertices.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or(t);
                        let k: i64 = head.parse().map_err(|_| err(format!("bad face index {t:?}")))?;
                        let n = vertices.len() as i64;
                        let k = if k < 0 { n + k } else { k - 1 };
                        if (0..n).contains(&k) {
                            Ok(k as usize)
                        } else {
                            Err(err(format!("face index {t} out of range")))
                        }
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least three vertices".into()));
                }
                for w in 1..idx.len() - 1 {
                    faces.push([idx[0], idx[w], idx[w + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}

/// Write one skinned mesh per pose as `frame_NNNN.obj` in `out_dir`, plus
/// `anchors_NNNN.obj` point clouds when the character has anchors.
pub fn export_obj_sequence(character: &Character, poses: &[Pose], out_dir: &Path) -> Result<ObjExport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let rest = character.rest_transforms();
    let mut out = ObjExport::default();
    for (t, pose) in poses.iter().enumerate() {
        let posed = forward_kinematics(&character.skeleton, pose)?;
        let verts = linear_blend_skinning(&character.mesh.vertices, &character.weights, &rest, &posed)?;
        let path = out_dir.join(format!("frame_{t:04}.obj"));
        write_text(&path, &write_obj(&verts, &character.mesh.faces))?;
        out.meshes.push(path);
        if let Some(set) = &character.anchors {
            let skin = skinning_transforms(&rest, &posed);
            let d = deform_points(&set.rest_positions(), &set.rest_frames(), &set.weights, &skin);
            let path = out_dir.join(format!("anchors_{t:04}.obj"));
            write_text(&path, &write_obj(&d.positions, &[]))?;
            out.anchors.push(path);
        }
    }
    Ok(out)
}

#[allow(dead_code)]
pub(crate) fn load_obj(path: &Path) -> Result<(Vec<Vec3>, Vec<[usize; 3]>)> {
    parse_obj(&read_text(path)?)
}
