use serde::{Deserialize, Serialize};

use super::{Transform, Vec3};
use crate::{Error, Real, Result};

/// Half-line segment `o + t d`, `t ∈ [t_near, t_far]`, with unit `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T> {
    pub origin: Vec3<T>,
    pub direction: Vec3<T>,
    pub t_near: T,
    pub t_far: T,
}

impl<T: Real> Ray<T> {
    pub fn new(origin: Vec3<T>, direction: Vec3<T>, t_near: T, t_far: T) -> Result<Self> {
        let n = direction.norm();
        if !origin.is_finite() || !n.is_finite() || (n - T::one()).abs() > T::lit(1e-6) {
            return Err(Error::invalid("ray direction must be a finite unit vector"));
        }
        if !(t_near >= T::zero() && t_near < t_far) {
            return Err(Error::invalid("ray bounds must satisfy 0 <= t_near < t_far"));
        }
        Ok(Self {
            origin,
            direction,
            t_near,
            t_far,
        })
    }

    #[inline]
    pub fn at(&self, t: T) -> Vec3<T> {
        self.origin + self.direction * t
    }

    /// Restricts the parameter range to the part inside `aabb`.
    pub fn clip(&self, aabb: &Aabb<T>) -> Option<Self> {
        let (t0, t1) = aabb.intersect(self.origin, self.direction)?;
        let t0 = t0.max(self.t_near);
        let t1 = t1.min(self.t_far);
        (t1 > t0).then_some(Self {
            t_near: t0,
            t_far: t1,
            ..*self
        })
    }
}

/// Pulls a ray back through a rigid transform (`M⁻¹ r` for `m_inverse = M⁻¹`).
///
/// The origin maps as a point, the direction as a vector. Rigid maps keep the
/// parameterization, so `t_near`/`t_far` carry over.
pub fn transform_ray<T: Real>(m_inverse: &Transform<T>, r: &Ray<T>) -> Ray<T> {
    let mut d = m_inverse.apply_vector(r.direction);
    let n2 = d.norm_squared();
    if (n2 - T::one()).abs() > T::epsilon() * T::lit(8.0) {
        d = d * (T::one() / n2.sqrt());
    }
    Ray {
        origin: m_inverse.apply_point(r.origin),
        direction: d,
        t_near: r.t_near,
        t_far: r.t_far,
    }
}

/// Axis-aligned box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Result<Self> {
        if !(min.x < max.x && min.y < max.y && min.z < max.z) {
            return Err(Error::invalid("bounding box must have positive extent on every axis"));
        }
        Ok(Self { min, max })
    }

    /// `[-1, 1]³`, the scene cube.
    pub fn unit_cube() -> Self {
        Self {
            min: Vec3::splat(-T::one()),
            max: Vec3::splat(T::one()),
        }
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn contains(&self, p: Vec3<T>) -> bool {
        p.x >= self.min.x && p.y >= self.min.y && p.z >= self.min.z && p.x <= self.max.x && p.y <= self.max.y && p.z <= self.max.z
    }

    /// Slab test; returns the entry/exit parameters of the infinite line.
    pub fn intersect(&self, o: Vec3<T>, d: Vec3<T>) -> Option<(T, T)> {
        let mut t0 = T::neg_infinity();
        let mut t1 = T::infinity();
        for a in 0..3 {
            if d[a].abs() < T::lit(1e-12) {
                if o[a] < self.min[a] || o[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = T::one() / d[a];
            let mut lo = (self.min[a] - o[a]) * inv;
            let mut hi = (self.max[a] - o[a]) * inv;
            if lo > hi {
                std::mem::swap(&mut lo, &mut hi);
            }
            t0 = t0.max(lo);
            t1 = t1.min(hi);
        }
        (t1 > t0).then_some((t0, t1))
    }

    pub fn cast<U: Real>(&self) -> Aabb<U> {
        Aabb {
            min: self.min.cast(),
            max: self.max.cast(),
        }
    }
}
