use serde::{Deserialize, Serialize};

use super::{Aabb, Mat3, Ray, Transform, Vec3};
use crate::{Error, Real, Result};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> Intrinsics<T> {
    pub fn matrix(&self) -> Mat3<T> {
        let (z, o) = (T::zero(), T::one());
        Mat3::from_rows([[self.fx, z, self.cx], [z, self.fy, self.cy], [z, z, o]])
    }

    pub fn cast<U: Real>(&self) -> Intrinsics<U> {
        Intrinsics {
            fx: U::lit(self.fx.to_f64_lossy()),
            fy: U::lit(self.fy.to_f64_lossy()),
            cx: U::lit(self.cx.to_f64_lossy()),
            cy: U::lit(self.cy.to_f64_lossy()),
        }
    }
}

/// Pinhole camera. Right-handed camera frame looking down −z, image `u`
/// to the right and `v` downward; pixel `(i, j)` has its center at
/// `(i + 0.5, j + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera<T> {
    pub intrinsics: Intrinsics<T>,
    pub world_from_camera: Transform<T>,
    pub width: usize,
    pub height: usize,
}

/// Image-plane position of a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection<T> {
    pub u: T,
    pub v: T,
    /// Distance in front of the camera along its optical axis.
    pub depth: T,
}

/// Depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;

impl<T: Real> Camera<T> {
    pub fn new(intrinsics: Intrinsics<T>, world_from_camera: Transform<T>, width: usize, height: usize) -> Result<Self> {
        let k = &intrinsics;
        if !(k.fx > T::zero() && k.fy > T::zero()) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if width == 0 || height == 0 {
            return Err(Error::invalid("camera resolution must be nonzero"));
        }
        let (w, h) = (T::from_usize_lossy(width), T::from_usize_lossy(height));
        if !(k.cx >= T::zero() && k.cx < w && k.cy >= T::zero() && k.cy < h) {
            return Err(Error::invalid("principal point must lie inside the image"));
        }
        if !world_from_camera.is_rigid(T::lit(1e-6)) {
            return Err(Error::invalid("camera extrinsics are not a rigid transform"));
        }
        Ok(Self {
            intrinsics,
            world_from_camera,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(intrinsics: Intrinsics<T>, eye: Vec3<T>, target: Vec3<T>, up: Vec3<T>, width: usize, height: usize) -> Result<Self> {
        let forward = (target - eye).normalized();
        let mut right = forward.cross(up);
        if right.norm() < T::lit(1e-6) {
            // looking along `up`; any perpendicular works
            let alt = if forward.x.abs() < T::lit(0.9) {
                Vec3::new(T::one(), T::zero(), T::zero())
            } else {
                Vec3::new(T::zero(), T::zero(), T::one())
            };
            right = forward.cross(alt);
        }
        let right = right.normalized();
        let cam_up = right.cross(forward);
        let back = -forward;
        let r = Mat3::from_rows([
            [right.x, cam_up.x, back.x],
            [right.y, cam_up.y, back.y],
            [right.z, cam_up.z, back.z],
        ]);
        Self::new(intrinsics, Transform::from_parts(r, eye), width, height)
    }

    pub fn center(&self) -> Vec3<T> {
        self.world_from_camera.translation
    }

    /// Unclipped ray through image position `(u, v)`.
    pub fn ray_through(&self, u: T, v: T) -> Ray<T> {
        let k = &self.intrinsics;
        let d_cam = Vec3::new((u - k.cx) / k.fx, -(v - k.cy) / k.fy, -T::one()).normalized();
        Ray {
            origin: self.center(),
            direction: self.world_from_camera.apply_vector(d_cam),
            t_near: T::zero(),
            t_far: T::infinity(),
        }
    }

    /// Ray through pixel-space position `(u, v)`, clipped to `bounds`.
    ///
    /// `Ok(None)` flags a degenerate ray that misses the scene box.
    pub fn pixel_ray(&self, u: T, v: T, bounds: &Aabb<T>) -> Result<Option<Ray<T>>> {
        let (w, h) = (T::from_usize_lossy(self.width), T::from_usize_lossy(self.height));
        if !(u >= T::zero() && u < w && v >= T::zero() && v < h) {
            return Err(Error::invalid(format!("pixel ({u}, {v}) outside {}x{} image", self.width, self.height)));
        }
        Ok(self.ray_through(u, v).clip(bounds))
    }

    /// Ray through the center of integer pixel `(i, j)`.
    pub fn pixel_center_ray(&self, i: usize, j: usize, bounds: &Aabb<T>) -> Result<Option<Ray<T>>> {
        self.pixel_ray(T::from_usize_lossy(i) + T::half(), T::from_usize_lossy(j) + T::half(), bounds)
    }

    /// Projects a world point; `None` when it is not in front of the camera.
    pub fn project_world(&self, y: Vec3<T>) -> Option<Projection<T>> {
        let p = self.world_from_camera.rotation.tr_mul_vec(y - self.world_from_camera.translation);
        let depth = -p.z;
        if !(depth > T::lit(MIN_DEPTH)) {
            return None;
        }
        let k = &self.intrinsics;
        Some(Projection {
            u: k.cx + k.fx * p.x / depth,
            v: k.cy - k.fy * p.y / depth,
            depth,
        })
    }

    /// Projection plus `∂(u, v)/∂y` for the world point `y`.
    pub fn project_world_with_jacobian(&self, y: Vec3<T>) -> Option<(Projection<T>, [Vec3<T>; 2])> {
        let rot = &self.world_from_camera.rotation;
        let p = rot.tr_mul_vec(y - self.world_from_camera.translation);
        let depth = -p.z;
        if !(depth > T::lit(MIN_DEPTH)) {
            return None;
        }
        let k = &self.intrinsics;
        let inv = T::one() / depth;
        let proj = Projection {
            u: k.cx + k.fx * p.x * inv,
            v: k.cy - k.fy * p.y * inv,
            depth,
        };
        // camera-frame partials: u = cx + fx x / (−z), v = cy − fy y / (−z)
        let du_dp = Vec3::new(k.fx * inv, T::zero(), k.fx * p.x * inv * inv);
        let dv_dp = Vec3::new(T::zero(), -k.fy * inv, -k.fy * p.y * inv * inv);
        // p = Rᵀ (y − c) → ∂/∂y = R · ∂/∂p
        Some((proj, [rot.mul_vec(du_dp), rot.mul_vec(dv_dp)]))
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        Camera {
            intrinsics: self.intrinsics.cast(),
            world_from_camera: self.world_from_camera.cast(),
            width: self.width,
            height: self.height,
        }
    }
}

/// Projects `M x` for a part motion `M`.
pub fn project_point<T: Real>(cam: &Camera<T>, motion: &Transform<T>, x: Vec3<T>) -> Option<Projection<T>> {
    cam.project_world(motion.apply_point(x))
}
