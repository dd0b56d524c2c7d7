//! Plain volume rendering along one ray and its reverse pass.

use super::{RenderOutput, SampleSet};
use crate::field::{RadianceField, RadianceModel, MAX_FEATURES};
use crate::geom::Ray;
use crate::Real;

/// Per-sample values kept from the forward pass.
#[derive(Clone, Debug, Default)]
pub struct RayTrace<T> {
    pub sigma: Vec<T>,
    pub rgb: Vec<[T; 3]>,
    /// Transmittance before each sample.
    pub trans: Vec<T>,
    pub alpha: Vec<T>,
    z: Vec<T>,
    feature_dim: usize,
}

impl<T: Real> RayTrace<T> {
    /// Latent recorded at sample `i`.
    pub fn latent(&self, i: usize) -> &[T] {
        &self.z[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    fn reset(&mut self, n: usize, f: usize) {
        self.sigma.clear();
        self.rgb.clear();
        self.trans.clear();
        self.alpha.clear();
        self.z.clear();
        self.z.resize(n * f, T::zero());
        self.feature_dim = f;
    }
}

pub fn render_ray<T: Real, M: RadianceModel<T> + ?Sized>(model: &M, ray: &Ray<T>, samples: &SampleSet<T>) -> RenderOutput<T> {
    let mut trace = RayTrace::default();
    render_ray_traced(model, ray, samples, &mut trace)
}

/// `render_ray` that records what the reverse pass needs in `trace`.
pub fn render_ray_traced<T: Real, M: RadianceModel<T> + ?Sized>(
    model: &M,
    ray: &Ray<T>,
    samples: &SampleSet<T>,
    trace: &mut RayTrace<T>,
) -> RenderOutput<T> {
    let n = samples.len();
    let f = model.feature_dim();
    trace.reset(n, f);
    let mut out = RenderOutput::<T>::background(1);
    let mut optical = T::zero();
    let mut weighted_t = T::zero();
    for i in 0..n {
        let t = samples.t[i];
        let z = &mut trace.z[i * f..(i + 1) * f];
        let sigma = model.query(ray.at(t), z);
        let rgb = if sigma > T::zero() { model.color(z, ray.direction) } else { [T::zero(); 3] };
        let trans = (-optical).exp();
        let tau = sigma * samples.delta[i];
        let alpha = -(-tau).exp_m1();
        let w = trans * alpha;
        for c in 0..3 {
            out.color[c] += w * rgb[c];
        }
        out.opacity += w;
        weighted_t += w * t;
        optical += tau;
        trace.sigma.push(sigma);
        trace.rgb.push(rgb);
        trace.trans.push(trans);
        trace.alpha.push(alpha);
    }
    out.opacity = out.opacity.min(T::one());
    out.depth = weighted_t / out.opacity.max(T::lit(1e-8));
    out.part_weights[0] = out.opacity;
    out
}

/// Accumulates `∂L/∂θ` into `grad` given `d_color = ∂L/∂C` and
/// `d_opacity = ∂L/∂O` for this ray.
pub fn backward_ray<T: Real>(
    field: &RadianceField<T>,
    ray: &Ray<T>,
    samples: &SampleSet<T>,
    trace: &RayTrace<T>,
    d_color: [T; 3],
    d_opacity: T,
    grad: &mut [T],
) {
    if d_color.iter().all(|g| *g == T::zero()) && d_opacity == T::zero() {
        return;
    }
    let f = trace.feature_dim;
    let mut suffix = T::zero();
    let mut d_z = [T::zero(); MAX_FEATURES];
    for i in (0..samples.len()).rev() {
        let sigma = trace.sigma[i];
        let rgb = trace.rgb[i];
        let g_dot: T = (0..3).map(|c| rgb[c] * d_color[c]).sum::<T>() + d_opacity;
        let trans = trace.trans[i];
        let w = trans * trace.alpha[i];
        let next_trans = trans * (T::one() - trace.alpha[i]);
        let d_sigma = samples.delta[i] * (next_trans * g_dot - suffix);
        suffix += w * g_dot;
        if sigma == T::zero() && d_sigma == T::zero() {
            continue;
        }
        let z = &trace.z[i * f..(i + 1) * f];
        let x = ray.at(samples.t[i]);
        if sigma > T::zero() {
            let d_rgb = [w * d_color[0], w * d_color[1], w * d_color[2]];
            field.color_backward(z, ray.direction, rgb, d_rgb, Some(&mut *grad), &mut d_z);
        } else {
            d_z[..f].iter_mut().for_each(|v| *v = T::zero());
        }
        field.backward_point(x, d_sigma, &d_z[..f], Some(&mut *grad));
    }
}
