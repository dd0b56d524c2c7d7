use serde::{Deserialize, Serialize};

use super::{Mat3, Vec3};
use crate::{Error, Real, Result};

/// Rigid transform `x ↦ R x + t` with `R` a proper rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform<T> {
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Default for Transform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Transform<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zero(),
        }
    }

    pub fn from_parts(rotation: Mat3<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vec3<T>) -> Self {
        Self::from_parts(Mat3::identity(), t)
    }

    /// Builds from a row-major homogeneous matrix, checking the rigid-body invariants.
    pub fn from_matrix(m: [[T; 4]; 4]) -> Result<Self> {
        let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
        let z = T::zero();
        let bottom_ok = m[3][0].abs() <= tol && m[3][1].abs() <= tol && m[3][2].abs() <= tol && (m[3][3] - T::one()).abs() <= tol;
        if !bottom_ok {
            return Err(Error::invalid("homogeneous matrix bottom row must be [0, 0, 0, 1]"));
        }
        let rotation = Mat3::from_rows([
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]);
        let out = Self::from_parts(rotation, Vec3::new(m[0][3], m[1][3], m[2][3]));
        if !out.is_rigid(tol) || rotation.determinant() <= z {
            return Err(Error::invalid("rotation block is not a proper orthonormal matrix"));
        }
        Ok(out)
    }

    pub fn matrix(&self) -> [[T; 4]; 4] {
        let r = &self.rotation.m;
        let t = self.translation;
        let (z, o) = (T::zero(), T::one());
        [
            [r[0][0], r[0][1], r[0][2], t.x],
            [r[1][0], r[1][1], r[1][2], t.y],
            [r[2][0], r[2][1], r[2][2], t.z],
            [z, z, z, o],
        ]
    }

    /// `‖RᵀR − I‖_∞ < tol` and `det R > 0`.
    pub fn is_rigid(&self, tol: T) -> bool {
        let err = (self.rotation.transpose() * self.rotation - Mat3::identity()).max_abs();
        err < tol && self.rotation.determinant() > T::zero() && self.translation.is_finite()
    }

    #[inline]
    pub fn apply_point(&self, p: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(p) + self.translation
    }

    #[inline]
    pub fn apply_vector(&self, v: Vec3<T>) -> Vec3<T> {
        self.rotation.mul_vec(v)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::from_parts(self.rotation * other.rotation, self.apply_point(other.translation))
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self::from_parts(rt, -rt.mul_vec(self.translation))
    }

    /// Rotation angle in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> T {
        rotation_angle(&self.rotation)
    }

    pub fn cast<U: Real>(&self) -> Transform<U> {
        Transform::from_parts(self.rotation.cast(), self.translation.cast())
    }
}

/// Angle of a rotation matrix, robust near both 0 and π.
pub fn rotation_angle<T: Real>(r: &Mat3<T>) -> T {
    let m = &r.m;
    let s = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]).norm() * T::half();
    let c = (r.trace() - T::one()) * T::half();
    s.atan2(c)
}

/// Rodrigues rotation about a unit axis.
pub fn rotation_about<T: Real>(axis: Vec3<T>, angle: T) -> Mat3<T> {
    let (s, c) = angle.sin_cos();
    let k = Mat3::skew(axis);
    Mat3::identity() + k.scale(s) + (k * k).scale(T::one() - c)
}

/// Rotation by `angle` about the line through `pivot` with direction `axis`.
pub fn se3_from_axis_angle<T: Real>(axis: Vec3<T>, angle: T, pivot: Vec3<T>) -> Result<Transform<T>> {
    check_unit(axis, "axis")?;
    let r = rotation_about(axis, angle);
    // translate(+pivot) · rotate · translate(−pivot)
    Ok(Transform::from_parts(r, pivot - r.mul_vec(pivot)))
}

pub(crate) fn check_unit<T: Real>(v: Vec3<T>, what: &str) -> Result<()> {
    let tol = T::lit(1e-6);
    if !v.is_finite() || (v.norm() - T::one()).abs() > tol {
        return Err(Error::invalid(format!("{what} must be a unit vector (norm {})", v.norm())));
    }
    Ok(())
}

/// Serialized form: row-major 4×4.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatrixRows(pub [[f64; 4]; 4]);

impl<T: Real> From<&Transform<T>> for MatrixRows {
    fn from(t: &Transform<T>) -> Self {
        let m = t.matrix();
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                out[i][j] = m[i][j].to_f64_lossy();
            }
        }
        MatrixRows(out)
    }
}
