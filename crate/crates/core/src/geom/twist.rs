//! se(3) twist coordinates: exponential, logarithm and the left Jacobian.
//!
//! A twist is `(ω, ρ)`: axis-angle rotation first, then translation. The
//! exponential is `R = exp(ω^)`, `t = V(ω) ρ`.

use serde::{Deserialize, Serialize};

use super::{Mat3, Transform, Vec3};
use crate::{Error, Real, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Twist<T> {
    pub rotation: Vec3<T>,
    pub translation: Vec3<T>,
}

/// Coefficients of the closed-form series, switched to Taylor expansions
/// below per-term thresholds where the direct formulas cancel badly.
struct Coeffs<T> {
    /// sin θ / θ
    a: T,
    /// (1 − cos θ) / θ²
    b: T,
    /// (θ − sin θ) / θ³
    c: T,
}

fn coeffs<T: Real>(theta_sq: T) -> Coeffs<T> {
    let th = theta_sq.sqrt();
    let t2 = theta_sq;
    let t4 = t2 * t2;
    let (s, co) = th.sin_cos();
    let a = if th < T::lit(1e-3) {
        T::one() - t2 / T::lit(6.0) + t4 / T::lit(120.0)
    } else {
        s / th
    };
    let b = if th < T::lit(1e-3) {
        T::half() - t2 / T::lit(24.0) + t4 / T::lit(720.0)
    } else {
        (T::one() - co) / t2
    };
    let c = if th < T::lit(1e-2) {
        T::one() / T::lit(6.0) - t2 / T::lit(120.0) + t4 / T::lit(5040.0)
    } else {
        (th - s) / (t2 * th)
    };
    Coeffs { a, b, c }
}

impl<T: Real> Twist<T> {
    pub fn new(rotation: Vec3<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_array(v: [T; 6]) -> Self {
        Self::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]))
    }

    pub fn to_array(self) -> [T; 6] {
        let (w, r) = (self.rotation, self.translation);
        [w.x, w.y, w.z, r.x, r.y, r.z]
    }

    pub fn scale(self, s: T) -> Self {
        Self::new(self.rotation * s, self.translation * s)
    }

    pub fn cast<U: Real>(self) -> Twist<U> {
        Twist::new(self.rotation.cast(), self.translation.cast())
    }

    /// SE(3) exponential.
    pub fn exp(&self) -> Transform<T> {
        let w = self.rotation;
        let k = Mat3::skew(w);
        let k2 = k * k;
        let cf = coeffs(w.norm_squared());
        let r = Mat3::identity() + k.scale(cf.a) + k2.scale(cf.b);
        let v = Mat3::identity() + k.scale(cf.b) + k2.scale(cf.c);
        Transform::from_parts(r, v.mul_vec(self.translation))
    }

    /// SE(3) logarithm; fails within 1e-3 rad of the π singularity.
    pub fn log(t: &Transform<T>) -> Result<Self> {
        let theta = t.rotation_angle();
        if theta > T::PI() - T::lit(1e-3) {
            return Err(Error::LogSingularity {
                angle: theta.to_f64_lossy(),
            });
        }
        let m = &t.rotation.m;
        let axis_sin = Vec3::new(m[2][1] - m[1][2], m[0][2] - m[2][0], m[1][0] - m[0][1]);
        let t2 = theta * theta;
        // θ / (2 sin θ)
        let f = if theta < T::lit(1e-3) {
            T::half() * (T::one() + t2 / T::lit(6.0) + T::lit(7.0) * t2 * t2 / T::lit(360.0))
        } else {
            theta / (T::two() * theta.sin())
        };
        let w = axis_sin * f;
        let k = Mat3::skew(w);
        // V⁻¹ = I − ½ W + e W², e = (1 − θ sin θ / (2 (1 − cos θ))) / θ²
        let e = if theta < T::lit(1e-2) {
            T::one() / T::lit(12.0) + t2 / T::lit(720.0) + t2 * t2 / T::lit(30240.0)
        } else {
            let (s, c) = theta.sin_cos();
            (T::one() - theta * s / (T::two() * (T::one() - c))) / t2
        };
        let v_inv = Mat3::identity() - k.scale(T::half()) + (k * k).scale(e);
        Ok(Self::new(w, v_inv.mul_vec(t.translation)))
    }

    /// Left Jacobian `J` with `exp(ξ + δ) ≈ exp((J δ)^) · exp(ξ)`.
    ///
    /// Row/column order is `(ω, ρ)`, so the rotation rows are `[J_so3, 0]`
    /// and the translation rows are `[Q, J_so3]`.
    pub fn left_jacobian(&self) -> [[T; 6]; 6] {
        let w = self.rotation;
        let rho = self.translation;
        let t2 = w.norm_squared();
        let th = t2.sqrt();
        let cf = coeffs(t2);
        let k = Mat3::skew(w);
        let j = Mat3::identity() + k.scale(cf.b) + (k * k).scale(cf.c);

        let t4 = t2 * t2;
        let d = if th < T::lit(0.1) {
            T::one() / T::lit(24.0) - t2 / T::lit(720.0) + t4 / T::lit(40320.0)
        } else {
            (t2 + T::two() * th.cos() - T::two()) / (T::two() * t4)
        };
        let e = if th < T::lit(0.2) {
            T::one() / T::lit(120.0) - t2 / T::lit(2520.0) + t4 / T::lit(120960.0)
        } else {
            let (s, c) = th.sin_cos();
            (T::two() * th - T::lit(3.0) * s + th * c) / (T::two() * t4 * th)
        };
        let p = Mat3::skew(w);
        let r = Mat3::skew(rho);
        let pr = p * r;
        let rp = r * p;
        let prp = pr * p;
        let q = r.scale(T::half())
            + (pr + rp + prp).scale(cf.c)
            + (p * pr + rp * p - prp.scale(T::lit(3.0))).scale(d)
            + (prp * p + p * prp).scale(e);

        let mut out = [[T::zero(); 6]; 6];
        for i in 0..3 {
            for jj in 0..3 {
                out[i][jj] = j.m[i][jj];
                out[3 + i][jj] = q.m[i][jj];
                out[3 + i][3 + jj] = j.m[i][jj];
            }
        }
        out
    }

    /// Like [`Self::pull_back`] when `local` was taken with respect to a left
    /// perturbation of the inverse motion `exp(−ξ)`.
    pub fn pull_back_inverse(&self, local: [T; 6]) -> [T; 6] {
        self.scale(-T::one()).pull_back(local).map(|v| -v)
    }

    /// Chain rule through the exponential.
    ///
    /// `local` is the gradient with respect to a left perturbation
    /// `exp(δ^) · exp(ξ)` in `(ω, ρ)` order. Returns the gradient with respect
    /// to `ξ` itself: `Jᵀ · local`.
    pub fn pull_back(&self, local: [T; 6]) -> [T; 6] {
        let j = self.left_jacobian();
        let mut out = [T::zero(); 6];
        for (c, o) in out.iter_mut().enumerate() {
            let mut acc = T::zero();
            for r in 0..6 {
                acc += j[r][c] * local[r];
            }
            *o = acc;
        }
        out
    }
}

/// Gradient of a scalar loss with respect to a left perturbation of a
/// transform, accumulated from points `y = T x` and directions `e = R d`.
///
/// For `exp(δ^) y = y + δ_ω × y + δ_ρ` the contribution of a point with
/// upstream gradient `g` is `(y × g, g)`; a direction contributes `(e × g, 0)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalGrad<T> {
    pub rotation: Vec3<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> LocalGrad<T> {
    #[inline]
    pub fn add_point(&mut self, y: Vec3<T>, g: Vec3<T>) {
        self.rotation += y.cross(g);
        self.translation += g;
    }

    #[inline]
    pub fn add_direction(&mut self, e: Vec3<T>, g: Vec3<T>) {
        self.rotation += e.cross(g);
    }

    pub fn to_array(self) -> [T; 6] {
        Twist::new(self.rotation, self.translation).to_array()
    }

    pub fn merge(&mut self, o: &Self) {
        self.rotation += o.rotation;
        self.translation += o.translation;
    }
}
