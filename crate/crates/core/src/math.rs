//! Small geometric helpers shared by the kinematics, anchor and objective code.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = UnitQuaternion<f64>;

/// Rigid transform `x -> rotation * x + translation`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Rigid {
    pub fn identity() -> Self {
        Rigid {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Rigid {
            rotation,
            translation,
        }
    }

    pub fn from_quat(q: &Quat, translation: Vec3) -> Self {
        Rigid {
            rotation: *q.to_rotation_matrix().matrix(),
            translation,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn compose(&self, other: &Rigid) -> Rigid {
        Rigid {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Rigid {
        let rt = self.rotation.transpose();
        Rigid {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// The vector `a` with `<m, [phi]x>_F = phi . a` for every `phi`.
#[inline]
pub fn axial(m: &Mat3) -> Vec3 {
    Vec3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
}

/// Exponential map of a rotation vector.
pub fn exp_quat(omega: &Vec3) -> Quat {
    UnitQuaternion::from_scaled_axis(*omega)
}

/// Rotation about +y by `theta` radians.
#[inline]
pub fn rot_y(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Derivative of [`rot_y`] with respect to `theta`.
#[inline]
pub fn rot_y_prime(theta: f64) -> Mat3 {
    let (s, c) = theta.sin_cos();
    Mat3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// 6D rotation encoding: the first two columns of the rotation matrix,
/// stacked column-major.
pub fn quat_to_6d(q: &Quat) -> [f64; 6] {
    let m = q.to_rotation_matrix();
    let m = m.matrix();
    [
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]
}

/// Decode a 6D rotation by Gram-Schmidt on the two columns and a cross product.
pub fn quat_from_6d(v: &[f64; 6]) -> Option<Quat> {
    let a = Vec3::new(v[0], v[1], v[2]);
    let b = Vec3::new(v[3], v[4], v[5]);
    let an = a.norm();
    if !(an > 1e-12) {
        return None;
    }
    let c0 = a / an;
    let b = b - c0 * c0.dot(&b);
    let bn = b.norm();
    if !(bn > 1e-12) {
        return None;
    }
    let c1 = b / bn;
    let c2 = c0.cross(&c1);
    let m = Mat3::from_columns(&[c0, c1, c2]);
    Some(UnitQuaternion::from_rotation_matrix(
        &Rotation3::from_matrix_unchecked(m),
    ))
}

/// Orthonormal basis `(u, v)` of the plane perpendicular to unit `axis`.
///
/// `u` is the projection of the forward axis (+z) onto the plane, or of +y
/// when the axis is within ~25 degrees of +-z. `v = axis x u`.
pub fn perpendicular_basis(axis: &Vec3) -> (Vec3, Vec3) {
    let reference = if axis.z.abs() > 0.9 {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let u = (reference - axis * axis.dot(&reference)).normalize();
    let v = axis.cross(&u);
    (u, v)
}

/// Max-abs deviation of `r^T r` from identity.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}
