//! The learnable scene: a trilinear voxel radiance field with a color head,
//! and the k-way segmentation head appended after the static fit.

mod grid;
mod mlp;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub use grid::{Trilinear, VertexGrid};
pub use mlp::{MlpShape, MAX_WIDTH};

use crate::geom::{Aabb, LocalGrad, Vec3};
use crate::Real;

/// Largest latent width supported by the stack buffers in the renderer.
pub const MAX_FEATURES: usize = 32;
/// Largest part count.
pub const MAX_PARTS: usize = 8;

/// Anything that maps a point to density plus a latent, and a latent plus a
/// direction to color. Implemented by the learned field and by the analytic
/// scenes used as ground truth.
pub trait RadianceModel<T: Real>: Sync {
    fn feature_dim(&self) -> usize;

    fn bounds(&self) -> &Aabb<T>;

    /// σ(x) ≥ 0; writes z(x) into `z[..feature_dim]`.
    fn query(&self, x: Vec3<T>, z: &mut [T]) -> T;

    fn density(&self, x: Vec3<T>) -> T {
        let mut z = [T::zero(); MAX_FEATURES];
        self.query(x, &mut z)
    }

    /// c(z, d) ∈ [0, 1]³.
    fn color(&self, z: &[T], d: Vec3<T>) -> [T; 3];
}

/// Per-point part probabilities from the latent.
pub trait PartModel<T: Real>: Sync {
    fn parts(&self) -> usize;

    /// Writes a point on the k-simplex into `out[..parts]`.
    fn probabilities(&self, z: &[T], out: &mut [T]);
}

/// A single part: every point belongs to it with probability one.
#[derive(Clone, Copy, Debug, Default)]
pub struct WholeObject;

impl<T: Real> PartModel<T> for WholeObject {
    fn parts(&self) -> usize {
        1
    }

    fn probabilities(&self, _z: &[T], out: &mut [T]) {
        out[0] = T::one();
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldShape {
    /// Vertices per axis.
    pub resolution: usize,
    pub feature_dim: usize,
    pub color_hidden: usize,
}

impl Default for FieldShape {
    fn default() -> Self {
        Self {
            resolution: 64,
            feature_dim: 8,
            color_hidden: 16,
        }
    }
}

/// Initial raw density; softplus(−1) ≈ 0.31.
pub const INIT_DENSITY_RAW: f64 = -1.0;
pub const INIT_FEATURE_RANGE: f64 = 0.1;

/// Trilinear voxel grid of `(raw density, feature)` with a color head.
///
/// Parameters live in one flat vector:
/// `density[V] | features[V × F] | color head`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField<T> {
    grid: VertexGrid<T>,
    feature_dim: usize,
    color_shape: MlpShape,
    params: Vec<T>,
    frozen: bool,
}

impl<T: Real> RadianceField<T> {
    pub fn new(bounds: Aabb<T>, shape: FieldShape, seed: u64) -> Self {
        assert!(shape.feature_dim >= 1 && shape.feature_dim <= MAX_FEATURES, "feature width must be in 1..={MAX_FEATURES}");
        let grid = VertexGrid::new(bounds, [shape.resolution; 3]);
        let color_shape = MlpShape::new(shape.feature_dim + 3, shape.color_hidden, 3);
        let v = grid.vertex_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(v * (1 + shape.feature_dim) + color_shape.len());
        params.resize(v, T::lit(INIT_DENSITY_RAW));
        for _ in 0..v * shape.feature_dim {
            params.push(T::lit(rng.gen_range(-INIT_FEATURE_RANGE..INIT_FEATURE_RANGE)));
        }
        params.extend(color_shape.init::<T>(&mut rng));
        Self {
            grid,
            feature_dim: shape.feature_dim,
            color_shape,
            params,
            frozen: false,
        }
    }

    /// Parameter count of a field with `shape` and `resolution` vertices per axis.
    pub fn param_count_for(resolution: usize, shape: FieldShape) -> usize {
        resolution.pow(3) * (1 + shape.feature_dim) + MlpShape::new(shape.feature_dim + 3, shape.color_hidden, 3).len()
    }

    /// Reassembles a field from stored parameters.
    pub fn from_params(bounds: Aabb<T>, shape: FieldShape, params: Vec<T>) -> crate::Result<Self> {
        let mut f = Self {
            grid: VertexGrid::new(bounds, [shape.resolution; 3]),
            feature_dim: shape.feature_dim,
            color_shape: MlpShape::new(shape.feature_dim + 3, shape.color_hidden, 3),
            params: Vec::new(),
            frozen: false,
        };
        let expect = f.param_count();
        if params.len() != expect {
            return Err(crate::Error::invalid(format!(
                "field parameter array has {} entries, expected {expect}",
                params.len()
            )));
        }
        f.params = params;
        Ok(f)
    }

    pub fn shape(&self) -> FieldShape {
        FieldShape {
            resolution: self.grid.resolution[0],
            feature_dim: self.feature_dim,
            color_hidden: self.color_shape.hidden,
        }
    }

    pub fn grid(&self) -> &VertexGrid<T> {
        &self.grid
    }

    pub fn param_count(&self) -> usize {
        self.grid.vertex_count() * (1 + self.feature_dim) + self.color_shape.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    /// Mutable parameters; panics once the field is frozen.
    pub fn params_mut(&mut self) -> &mut [T] {
        assert!(!self.frozen, "attempted to modify a frozen radiance field");
        &mut self.params
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    #[inline]
    fn feature_offset(&self) -> usize {
        self.grid.vertex_count()
    }

    #[inline]
    fn color_offset(&self) -> usize {
        self.grid.vertex_count() * (1 + self.feature_dim)
    }

    /// Number of grid parameters (densities and features); the color head follows.
    pub fn grid_param_count(&self) -> usize {
        self.color_offset()
    }

    pub fn color_params(&self) -> &[T] {
        &self.params[self.color_offset()..]
    }

    pub fn color_shape(&self) -> MlpShape {
        self.color_shape
    }

    /// Raw (pre-softplus) interpolated density and features.
    #[inline]
    fn interpolate(&self, tri: &Trilinear<T>, z: &mut [T]) -> T {
        let f = self.feature_dim;
        let fo = self.feature_offset();
        let mut raw = T::zero();
        z[..f].iter_mut().for_each(|v| *v = T::zero());
        for c in 0..8 {
            let (vi, w) = (tri.index[c], tri.weight[c]);
            raw += w * self.params[vi];
            let feats = &self.params[fo + vi * f..fo + (vi + 1) * f];
            for (zv, fv) in z.iter_mut().zip(feats) {
                *zv += w * *fv;
            }
        }
        raw
    }

    /// Reverse mode of `query` and (optionally) the color head.
    ///
    /// `d_sigma` and `d_z` are upstream gradients at the point. Parameter
    /// gradients go to `grad` (same layout as [`Self::params`]) when given;
    /// the returned vector is `∂L/∂x`.
    pub fn backward_point(&self, x: Vec3<T>, d_sigma: T, d_z: &[T], grad: Option<&mut [T]>) -> Vec3<T> {
        let Some(tri) = self.grid.locate(x) else {
            return Vec3::zero();
        };
        let mut z = [T::zero(); MAX_FEATURES];
        let raw = self.interpolate(&tri, &mut z);
        let d_raw = d_sigma * raw.sigmoid();
        let f = self.feature_dim;
        let fo = self.feature_offset();
        if let Some(grad) = grad {
            for c in 0..8 {
                let (vi, w) = (tri.index[c], tri.weight[c]);
                grad[vi] += w * d_raw;
                let g = &mut grad[fo + vi * f..fo + (vi + 1) * f];
                for (gv, dz) in g.iter_mut().zip(d_z) {
                    *gv += w * *dz;
                }
            }
        }
        let mut dx = Vec3::zero();
        for c in 0..8 {
            let vi = tri.index[c];
            let feats = &self.params[fo + vi * f..fo + (vi + 1) * f];
            let mut s = d_raw * self.params[vi];
            for (fv, dz) in feats.iter().zip(d_z) {
                s += *fv * *dz;
            }
            dx += tri.d_weight[c] * s;
        }
        dx
    }

    /// Color head forward, keeping activations for the reverse pass.
    #[inline]
    pub fn color_forward(&self, z: &[T], d: Vec3<T>, hidden: &mut [T]) -> [T; 3] {
        let f = self.feature_dim;
        let mut input = [T::zero(); MAX_FEATURES + 3];
        input[..f].copy_from_slice(&z[..f]);
        input[f] = d.x;
        input[f + 1] = d.y;
        input[f + 2] = d.z;
        let mut out = [T::zero(); 3];
        self.color_shape.forward(self.color_params(), &input[..f + 3], hidden, &mut out);
        [out[0].sigmoid(), out[1].sigmoid(), out[2].sigmoid()]
    }

    /// Color head reverse pass. Writes `∂L/∂z` into `d_z` and returns `∂L/∂d`.
    pub fn color_backward(&self, z: &[T], d: Vec3<T>, rgb: [T; 3], d_rgb: [T; 3], grad: Option<&mut [T]>, d_z: &mut [T]) -> Vec3<T> {
        let f = self.feature_dim;
        let mut input = [T::zero(); MAX_FEATURES + 3];
        input[..f].copy_from_slice(&z[..f]);
        input[f] = d.x;
        input[f + 1] = d.y;
        input[f + 2] = d.z;
        let mut hidden = [T::zero(); MAX_WIDTH];
        let mut raw = [T::zero(); 3];
        self.color_shape.forward(self.color_params(), &input[..f + 3], &mut hidden, &mut raw);
        let d_raw: [T; 3] = std::array::from_fn(|i| d_rgb[i] * rgb[i] * (T::one() - rgb[i]));
        let co = self.color_offset();
        let mut d_in = [T::zero(); MAX_FEATURES + 3];
        let g = grad.map(|g| &mut g[co..]);
        self.color_shape
            .backward(self.color_params(), &input[..f + 3], &hidden, &d_raw, g, Some(&mut d_in[..f + 3]));
        d_z[..f].copy_from_slice(&d_in[..f]);
        Vec3::new(d_in[f], d_in[f + 1], d_in[f + 2])
    }

    /// SHA-256 of the parameter bytes (little-endian `f64`), hex encoded.
    pub fn param_hash(&self) -> String {
        hash_params(&self.params)
    }

    pub fn cast<U: Real>(&self) -> RadianceField<U> {
        RadianceField {
            grid: VertexGrid::new(self.grid.bounds.cast(), self.grid.resolution),
            feature_dim: self.feature_dim,
            color_shape: self.color_shape,
            params: self.params.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
            frozen: self.frozen,
        }
    }
}

impl<T: Real> RadianceModel<T> for RadianceField<T> {
    fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    fn bounds(&self) -> &Aabb<T> {
        &self.grid.bounds
    }

    #[inline]
    fn query(&self, x: Vec3<T>, z: &mut [T]) -> T {
        match self.grid.locate(x) {
            Some(tri) => self.interpolate(&tri, z).softplus(),
            None => {
                z[..self.feature_dim].iter_mut().for_each(|v| *v = T::zero());
                T::zero()
            }
        }
    }

    #[inline]
    fn density(&self, x: Vec3<T>) -> T {
        match self.grid.locate(x) {
            Some(tri) => {
                let mut raw = T::zero();
                for c in 0..8 {
                    raw += tri.weight[c] * self.params[tri.index[c]];
                }
                raw.softplus()
            }
            None => T::zero(),
        }
    }

    #[inline]
    fn color(&self, z: &[T], d: Vec3<T>) -> [T; 3] {
        let mut hidden = [T::zero(); MAX_WIDTH];
        self.color_forward(z, d, &mut hidden)
    }
}

/// Two-layer perceptron from the latent to k part probabilities (softmax).
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationHead<T> {
    shape: MlpShape,
    params: Vec<T>,
}

pub const DEFAULT_SEG_HIDDEN: usize = 16;

impl<T: Real> SegmentationHead<T> {
    pub fn new(feature_dim: usize, hidden: usize, parts: usize, seed: u64) -> Self {
        assert!((1..=MAX_PARTS).contains(&parts), "part count must be in 1..={MAX_PARTS}");
        let shape = MlpShape::new(feature_dim, hidden, parts);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = shape.init(&mut rng);
        Self { shape, params }
    }

    pub fn from_params(feature_dim: usize, hidden: usize, parts: usize, params: Vec<T>) -> crate::Result<Self> {
        let shape = MlpShape::new(feature_dim, hidden, parts);
        if params.len() != shape.len() {
            return Err(crate::Error::invalid(format!(
                "segmentation head has {} parameters, expected {}",
                params.len(),
                shape.len()
            )));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn logits(&self, z: &[T], hidden: &mut [T], out: &mut [T]) {
        self.shape.forward(&self.params, &z[..self.shape.input], hidden, out);
    }

    /// Softmax reverse pass. `d_prob` is the upstream gradient on the
    /// probabilities; writes `∂L/∂z` into `d_z` when given.
    pub fn backward(&self, z: &[T], prob: &[T], d_prob: &[T], grad: Option<&mut [T]>, d_z: Option<&mut [T]>) {
        let k = self.shape.output;
        let dot: T = (0..k).map(|m| prob[m] * d_prob[m]).sum();
        let mut d_logit = [T::zero(); MAX_PARTS];
        for m in 0..k {
            d_logit[m] = prob[m] * (d_prob[m] - dot);
        }
        self.backward_logits(z, &d_logit[..k], grad, d_z);
    }

    /// Reverse pass from `∂L/∂logits`.
    pub fn backward_logits(&self, z: &[T], d_logit: &[T], grad: Option<&mut [T]>, d_z: Option<&mut [T]>) {
        let k = self.shape.output;
        let mut hidden = [T::zero(); MAX_WIDTH];
        let mut raw = [T::zero(); MAX_PARTS];
        self.shape.forward(&self.params, &z[..self.shape.input], &mut hidden, &mut raw[..k]);
        self.shape.backward(&self.params, &z[..self.shape.input], &hidden, d_logit, grad, d_z);
    }

    pub fn param_hash(&self) -> String {
        hash_params(&self.params)
    }
}

impl<T: Real> PartModel<T> for SegmentationHead<T> {
    fn parts(&self) -> usize {
        self.shape.output
    }

    #[inline]
    fn probabilities(&self, z: &[T], out: &mut [T]) {
        let k = self.shape.output;
        let mut hidden = [T::zero(); MAX_WIDTH];
        self.logits(z, &mut hidden, out);
        softmax_in_place(&mut out[..k]);
    }
}

#[inline]
pub fn softmax_in_place<T: Real>(v: &mut [T]) {
    let m = v.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        sum += *x;
    }
    let inv = T::one() / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

pub fn hash_params<T: Real>(params: &[T]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_f64_lossy().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Gradient accumulator mirroring the learnable state: field parameters,
/// head parameters and one left-perturbation gradient per part motion.
///
/// Empty vectors mean "not tracked"; the renderer skips those terms.
#[derive(Clone, Debug, Default)]
pub struct GradientBuffer<T> {
    pub field: Vec<T>,
    pub head: Vec<T>,
    /// Gradient with respect to a left perturbation of each part's inverse
    /// motion `M_ℓ⁻¹`; converted to twist gradients by the optimizer.
    pub motion: Vec<LocalGrad<T>>,
    pub loss: T,
}

impl<T: Real> GradientBuffer<T> {
    pub fn new(field_len: usize, head_len: usize, parts: usize) -> Self {
        Self {
            field: vec![T::zero(); field_len],
            head: vec![T::zero(); head_len],
            motion: vec![LocalGrad::default(); parts],
            loss: T::zero(),
        }
    }

    pub fn zero(&mut self) {
        self.field.iter_mut().for_each(|v| *v = T::zero());
        self.head.iter_mut().for_each(|v| *v = T::zero());
        self.motion.iter_mut().for_each(|v| *v = LocalGrad::default());
        self.loss = T::zero();
    }

    pub fn is_zero(&self) -> bool {
        self.field.iter().chain(self.head.iter()).all(|v| *v == T::zero())
            && self.motion.iter().all(|m| *m == LocalGrad::default())
    }

    /// Adds `other` into `self`; used to merge worker buffers in a fixed order.
    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.field.iter_mut().zip(&other.field) {
            *a += *b;
        }
        for (a, b) in self.head.iter_mut().zip(&other.head) {
            *a += *b;
        }
        for (a, b) in self.motion.iter_mut().zip(&other.motion) {
            a.merge(b);
        }
        self.loss += other.loss;
    }
}
