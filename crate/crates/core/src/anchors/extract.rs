use rayon::prelude::*;

use super::raycast::{Bvh, Hit};
use super::{Anchor, AnchorSet};
use crate::character::{BodyParts, Mesh, Skeleton, SkinWeights};
use crate::error::{Error, Result};
use crate::math::{perpendicular_basis, Mat3, Vec3};

pub const DEFAULT_SAMPLES_PER_BONE: usize = 3;
pub const DEFAULT_RAYS_PER_SAMPLE: usize = 8;

/// Smallest accepted hit distance along a ray.
const T_MIN: f64 = 1e-7;

/// Cast `rays_per_sample` rays perpendicular to every bone from
/// `samples_per_bone` evenly spaced origins and keep the first surface hit
/// of each.
///
/// A ray that misses is retried in the opposite direction; if that misses
/// too the mesh does not enclose the bone and an extraction error naming
/// the bone is returned.
pub fn extract_anchors(
    mesh: &Mesh,
    skeleton: &Skeleton,
    weights: &SkinWeights,
    parts: &BodyParts,
    samples_per_bone: usize,
    rays_per_sample: usize,
) -> Result<AnchorSet> {
    if samples_per_bone == 0 || rays_per_sample == 0 {
        return Err(Error::config("samples per bone and rays per sample must be at least 1"));
    }
    if weights.len() != mesh.vertices.len() {
        return Err(Error::validation("skin weights do not match the mesh"));
    }
    let bvh = Bvh::new(&mesh.vertices, &mesh.faces);
    let normals = mesh.vertex_normals();
    let bones = skeleton.bones();
    let per_bone: Vec<Vec<Anchor>> = bones
        .par_iter()
        .map(|&bone| bone_anchors(mesh, &bvh, &normals, skeleton, bone, samples_per_bone, rays_per_sample))
        .collect::<Result<_>>()?;
    let anchors: Vec<Anchor> = per_bone.into_iter().flatten().collect();
    let part_of = anchors.iter().map(|a| parts.of_joint(a.bone.0)).collect();
    let anchor_weights = anchors
        .iter()
        .map(|a| weights.blend(mesh.faces[a.face], a.bary))
        .collect();
    Ok(AnchorSet {
        anchors,
        samples_per_bone,
        rays_per_sample,
        parts: part_of,
        weights: anchor_weights,
    })
}

fn bone_anchors(
    mesh: &Mesh,
    bvh: &Bvh,
    normals: &[Vec3],
    skeleton: &Skeleton,
    bone: (usize, usize),
    samples: usize,
    rays: usize,
) -> Result<Vec<Anchor>> {
    let name = || format!("{}->{}", skeleton.joint(bone.0).name, skeleton.joint(bone.1).name);
    let a = skeleton.joint(bone.0).rest_global;
    let b = skeleton.joint(bone.1).rest_global;
    let len = (b - a).norm();
    if !(len > 0.0) {
        return Err(Error::Extraction {
            bone: name(),
            detail: "bone has zero length".into(),
        });
    }
    let axis = (b - a) / len;
    let (u, v) = perpendicular_basis(&axis);
    let mut out = Vec::with_capacity(samples * rays);
    for s in 0..samples {
        let origin = a + (b - a) * ((s as f64 + 0.5) / samples as f64);
        for r in 0..rays {
            let angle = std::f64::consts::TAU * r as f64 / rays as f64;
            let dir = u * angle.cos() + v * angle.sin();
            let (hit, dir) = match bvh.closest_hit(&origin, &dir, T_MIN) {
                Some(h) => (h, dir),
                None => match bvh.closest_hit(&origin, &-dir, T_MIN) {
                    Some(h) => (h, -dir),
                    None => {
                        return Err(Error::Extraction {
                            bone: name(),
                            detail: format!("sample {s}, ray {r} misses the mesh in both directions"),
                        })
                    }
                },
            };
            out.push(make_anchor(mesh, normals, bone, s, r, &hit, &axis, &dir));
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn make_anchor(
    mesh: &Mesh,
    normals: &[Vec3],
    bone: (usize, usize),
    sample: usize,
    ray: usize,
    hit: &Hit,
    axis: &Vec3,
    dir: &Vec3,
) -> Anchor {
    let f = mesh.faces[hit.face];
    let tri = mesh.face_vertices(hit.face);
    let position = tri[0] * hit.bary[0] + tri[1] * hit.bary[1] + tri[2] * hit.bary[2];
    let interp = normals[f[0]] * hit.bary[0] + normals[f[1]] * hit.bary[1] + normals[f[2]] * hit.bary[2];
    let mut n = interp - axis * axis.dot(&interp);
    if n.norm() < 1e-9 {
        // surface normal along the bone (an end cap): fall back to the ray
        n = *dir;
    }
    n.normalize_mut();
    if n.dot(dir) < 0.0 {
        n = -n;
    }
    let bt = n.cross(axis);
    Anchor {
        bone,
        sample,
        ray,
        face: hit.face,
        bary: hit.bary,
        rest_position: position,
        frame: Mat3::from_columns(&[*axis, bt, n]),
    }
}
