//! Trilinear lookup on a vertex grid.

use crate::geom::{Aabb, Vec3};
use crate::Real;

/// The eight corner vertices and weights of a trilinear lookup, plus the
/// weight derivatives with respect to the query point.
#[derive(Clone, Copy, Debug)]
pub struct Trilinear<T> {
    pub index: [usize; 8],
    pub weight: [T; 8],
    pub d_weight: [Vec3<T>; 8],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VertexGrid<T> {
    pub bounds: Aabb<T>,
    /// Vertices per axis.
    pub resolution: [usize; 3],
    spacing: Vec3<T>,
    inv_spacing: Vec3<T>,
}

impl<T: Real> VertexGrid<T> {
    pub fn new(bounds: Aabb<T>, resolution: [usize; 3]) -> Self {
        assert!(resolution.iter().all(|&r| r >= 2), "grid needs at least two vertices per axis");
        let ext = bounds.extent();
        let spacing = Vec3::new(
            ext.x / T::from_usize_lossy(resolution[0] - 1),
            ext.y / T::from_usize_lossy(resolution[1] - 1),
            ext.z / T::from_usize_lossy(resolution[2] - 1),
        );
        let inv_spacing = Vec3::new(T::one() / spacing.x, T::one() / spacing.y, T::one() / spacing.z);
        Self {
            bounds,
            resolution,
            spacing,
            inv_spacing,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn spacing(&self) -> Vec3<T> {
        self.spacing
    }

    #[inline]
    pub fn vertex_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution[1] + j) * self.resolution[0] + i
    }

    pub fn vertex_position(&self, i: usize, j: usize, k: usize) -> Vec3<T> {
        self.bounds.min
            + Vec3::new(
                self.spacing.x * T::from_usize_lossy(i),
                self.spacing.y * T::from_usize_lossy(j),
                self.spacing.z * T::from_usize_lossy(k),
            )
    }

    /// `None` outside the bounds.
    #[inline]
    pub fn locate(&self, x: Vec3<T>) -> Option<Trilinear<T>> {
        if !self.bounds.contains(x) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [T::zero(); 3];
        for a in 0..3 {
            let g = (x[a] - self.bounds.min[a]) * self.inv_spacing[a];
            let top = self.resolution[a] - 2;
            let fl = g.floor().to_usize().unwrap_or(0).min(top);
            base[a] = fl;
            frac[a] = g - T::from_usize_lossy(fl);
        }
        let [fx, fy, fz] = frac;
        let one = T::one();
        let wx = [one - fx, fx];
        let wy = [one - fy, fy];
        let wz = [one - fz, fz];
        let dx = [-self.inv_spacing.x, self.inv_spacing.x];
        let dy = [-self.inv_spacing.y, self.inv_spacing.y];
        let dz = [-self.inv_spacing.z, self.inv_spacing.z];
        let mut out = Trilinear {
            index: [0; 8],
            weight: [T::zero(); 8],
            d_weight: [Vec3::zero(); 8],
        };
        let mut c = 0;
        for k in 0..2 {
            for j in 0..2 {
                for i in 0..2 {
                    out.index[c] = self.vertex_index(base[0] + i, base[1] + j, base[2] + k);
                    out.weight[c] = wx[i] * wy[j] * wz[k];
                    out.d_weight[c] = Vec3::new(dx[i] * wy[j] * wz[k], wx[i] * dy[j] * wz[k], wx[i] * wy[j] * dz[k]);
                    c += 1;
                }
            }
        }
        Some(out)
    }
}
