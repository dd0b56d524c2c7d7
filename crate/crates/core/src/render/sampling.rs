//! Two-pass sampling along rays: stratified, then inverse-CDF importance.

use rand::Rng;

use crate::field::{PartModel, RadianceModel, MAX_FEATURES, MAX_PARTS};
use crate::geom::{transform_ray, Ray, Transform};
use crate::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self { n_coarse: 64, n_fine: 32 }
    }
}

/// Sample parameters along one ray. Empty for rays that miss the scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleSet<T> {
    pub t: Vec<T>,
    /// `t[i+1] − t[i]`; the last interval runs to `t_far`.
    pub delta: Vec<T>,
}

impl<T: Real> SampleSet<T> {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Evenly spaced midpoints; used by the reference renderer.
    pub fn uniform(ray: &Ray<T>, n: usize) -> Self {
        let step = (ray.t_far - ray.t_near) / T::from_usize_lossy(n);
        let t = (0..n).map(|i| ray.t_near + step * (T::from_usize_lossy(i) + T::half())).collect();
        Self::from_sorted(t, ray.t_far)
    }

    /// Builds intervals from sorted, distinct parameters.
    pub fn from_sorted(t: Vec<T>, t_far: T) -> Self {
        let n = t.len();
        let mut delta = Vec::with_capacity(n);
        for i in 0..n {
            let next = if i + 1 < n { t[i + 1] } else { t_far };
            delta.push(next - t[i]);
        }
        Self { t, delta }
    }
}

/// One jittered sample per equal-width stratum of `[t_near, t_far]`.
pub fn stratified<T: Real>(ray: &Ray<T>, n: usize, rng: &mut impl Rng) -> Vec<T> {
    let step = (ray.t_far - ray.t_near) / T::from_usize_lossy(n);
    (0..n)
        .map(|i| ray.t_near + step * (T::from_usize_lossy(i) + T::lit(rng.gen::<f64>())))
        .collect()
}

/// Volume-rendering weights for densities on equal-width strata.
fn stratum_weights<T: Real>(sigma: &[T], step: T, out: &mut [T]) {
    let mut optical = T::zero();
    for (w, s) in out.iter_mut().zip(sigma) {
        let trans = (-optical).exp();
        let tau = *s * step;
        *w = trans * -(-tau).exp_m1();
        optical += tau;
    }
}

/// Draws `n_fine` parameters from the piecewise-constant density over the
/// strata with masses `weights` (inverse CDF). Zero total mass falls back to
/// uniform.
pub fn importance_samples<T: Real>(ray: &Ray<T>, weights: &[T], n_fine: usize, rng: &mut impl Rng) -> Vec<T> {
    let n = weights.len();
    if n_fine == 0 || n == 0 {
        return Vec::new();
    }
    let step = (ray.t_far - ray.t_near) / T::from_usize_lossy(n);
    let total: T = weights.iter().copied().sum();
    let uniform = !(total > T::lit(1e-12)) || !total.is_finite();
    let mut cdf = Vec::with_capacity(n + 1);
    cdf.push(T::zero());
    let mut acc = T::zero();
    for w in weights {
        acc += if uniform { T::one() } else { (*w).max(T::zero()) };
        cdf.push(acc);
    }
    let norm = acc;
    let mut out = Vec::with_capacity(n_fine);
    let mut bin = 0;
    for j in 0..n_fine {
        let u = (T::from_usize_lossy(j) + T::lit(rng.gen::<f64>())) / T::from_usize_lossy(n_fine) * norm;
        while bin + 1 < n && cdf[bin + 1] <= u {
            bin += 1;
        }
        let mass = cdf[bin + 1] - cdf[bin];
        let frac = if mass > T::zero() { ((u - cdf[bin]) / mass).clamp01() } else { T::half() };
        out.push(ray.t_near + step * (T::from_usize_lossy(bin) + frac));
    }
    out
}

fn merge<T: Real>(mut coarse: Vec<T>, fine: Vec<T>, t_far: T) -> SampleSet<T> {
    coarse.extend(fine);
    coarse.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    coarse.dedup();
    SampleSet::from_sorted(coarse, t_far)
}

/// Stratified pass, then `n_fine` importance samples from its weights.
pub fn sample_ray<T: Real, M: RadianceModel<T> + ?Sized>(
    model: &M,
    ray: &Ray<T>,
    cfg: SamplingConfig,
    rng: &mut impl Rng,
) -> SampleSet<T> {
    if cfg.n_coarse == 0 {
        return SampleSet::default();
    }
    let coarse = stratified(ray, cfg.n_coarse, rng);
    if cfg.n_fine == 0 {
        return SampleSet::from_sorted(coarse, ray.t_far);
    }
    let sigma: Vec<T> = coarse.iter().map(|&t| model.density(ray.at(t))).collect();
    let step = (ray.t_far - ray.t_near) / T::from_usize_lossy(cfg.n_coarse);
    let mut w = vec![T::zero(); cfg.n_coarse];
    stratum_weights(&sigma, step, &mut w);
    let fine = importance_samples(ray, &w, cfg.n_fine, rng);
    merge(coarse, fine, ray.t_far)
}

/// Shared samples for part-aware rendering. The importance weight of a
/// stratum is the maximum over parts of that part's own rendering weight
/// along its virtual ray, so every part's surface gets samples.
pub fn sample_ray_composite<T: Real, M: RadianceModel<T> + ?Sized, S: PartModel<T> + ?Sized>(
    model: &M,
    seg: &S,
    inverses: &[Transform<T>],
    ray: &Ray<T>,
    cfg: SamplingConfig,
    rng: &mut impl Rng,
) -> SampleSet<T> {
    if cfg.n_coarse == 0 {
        return SampleSet::default();
    }
    let coarse = stratified(ray, cfg.n_coarse, rng);
    if cfg.n_fine == 0 {
        return SampleSet::from_sorted(coarse, ray.t_far);
    }
    let k = seg.parts();
    let step = (ray.t_far - ray.t_near) / T::from_usize_lossy(cfg.n_coarse);
    let mut best = vec![T::zero(); cfg.n_coarse];
    let mut rho = vec![T::zero(); cfg.n_coarse];
    let mut w = vec![T::zero(); cfg.n_coarse];
    let mut z = [T::zero(); MAX_FEATURES];
    let mut p = [T::zero(); MAX_PARTS];
    for (l, inv) in inverses.iter().enumerate().take(k) {
        let vr = transform_ray(inv, ray);
        for (r, &t) in rho.iter_mut().zip(&coarse) {
            let s = model.query(vr.at(t), &mut z);
            *r = if s > T::zero() {
                seg.probabilities(&z, &mut p);
                p[l] * s
            } else {
                T::zero()
            };
        }
        stratum_weights(&rho, step, &mut w);
        for (b, wi) in best.iter_mut().zip(&w) {
            *b = b.max(*wi);
        }
    }
    let fine = importance_samples(ray, &best, cfg.n_fine, rng);
    merge(coarse, fine, ray.t_far)
}
