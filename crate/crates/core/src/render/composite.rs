//! Part-aware composite rendering over virtual rays.
//!
//! Every part `ℓ` sees the ray pulled back by its motion, `r_ℓ = M_ℓ⁻¹ r`.
//! At sample `i` the part-aware densities `ρ_ℓ = s_ℓ σ` are summed into
//! `P_i`, which drives transmittance and opacity, and the sample color is
//! the density-weighted mean `Σ ρ_ℓ c_ℓ / P_i`. With identity motions this
//! collapses to plain rendering for any partition of unity `s`.

use super::{PartGradient, RenderOutput, SampleSet};
use crate::field::{GradientBuffer, PartModel, RadianceField, RadianceModel, MAX_FEATURES, MAX_PARTS};
use crate::geom::{transform_ray, Ray, Transform};
use crate::{Error, Real, Result};

/// Per-part rigid motions with cached inverses. Part 0 is the static part.
#[derive(Clone, Debug, PartialEq)]
pub struct PartMotions<T> {
    forward: Vec<Transform<T>>,
    inverse: Vec<Transform<T>>,
}

impl<T: Real> PartMotions<T> {
    pub fn new(motions: Vec<Transform<T>>) -> Result<Self> {
        if motions.is_empty() || motions.len() > MAX_PARTS {
            return Err(Error::invalid(format!("need 1..={MAX_PARTS} part motions, got {}", motions.len())));
        }
        let m0 = motions[0].matrix();
        let id = Transform::<T>::identity().matrix();
        let off = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).any(|(r, c)| (m0[r][c] - id[r][c]).abs() > T::lit(1e-12));
        if off {
            return Err(Error::invalid("motion of part 0 must be the identity"));
        }
        let inverse = motions.iter().map(|m| m.inverse()).collect();
        Ok(Self { forward: motions, inverse })
    }

    pub fn identity(parts: usize) -> Self {
        Self::new(vec![Transform::identity(); parts.max(1)]).expect("identity motions are valid")
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn motions(&self) -> &[Transform<T>] {
        &self.forward
    }

    pub fn inverses(&self) -> &[Transform<T>] {
        &self.inverse
    }
}

/// Forward-pass cache for [`backward_ray_composite`]. Indexed `i * k + ℓ`.
#[derive(Clone, Debug, Default)]
pub struct CompositeTrace<T> {
    rays: Vec<Ray<T>>,
    sigma: Vec<T>,
    prob: Vec<T>,
    rgb: Vec<[T; 3]>,
    z: Vec<T>,
    /// Per sample: total part-aware density, `α/P`, transmittance.
    total: Vec<T>,
    ratio: Vec<T>,
    trans: Vec<T>,
    parts: usize,
    feature_dim: usize,
}

/// `(1 − e^{−Pδ}) / P`, continuous at `P = 0`.
#[inline]
fn alpha_ratio<T: Real>(p: T, delta: T) -> T {
    if p > T::zero() {
        -(-p * delta).exp_m1() / p
    } else {
        delta
    }
}

/// Derivative of [`alpha_ratio`] in `P`.
#[inline]
fn alpha_ratio_grad<T: Real>(p: T, delta: T, ratio: T) -> T {
    let x = p * delta;
    if x < T::lit(1e-3) {
        let d2 = delta * delta;
        d2 * (-T::half() + x / T::lit(3.0) - x * x / T::lit(8.0))
    } else {
        (delta * (-x).exp() - ratio) / p
    }
}

pub fn render_ray_composite<T: Real, M: RadianceModel<T> + ?Sized, S: PartModel<T> + ?Sized>(
    model: &M,
    seg: &S,
    motions: &PartMotions<T>,
    ray: &Ray<T>,
    samples: &SampleSet<T>,
    trace: Option<&mut CompositeTrace<T>>,
) -> Result<RenderOutput<T>> {
    let k = seg.parts();
    if motions.len() != k {
        return Err(Error::invalid(format!("{} motions for {k} parts", motions.len())));
    }
    let mut local = CompositeTrace::default();
    let tr = trace.unwrap_or(&mut local);
    let n = samples.len();
    let f = model.feature_dim();
    tr.parts = k;
    tr.feature_dim = f;
    tr.rays.clear();
    tr.rays.extend(motions.inverses().iter().map(|inv| transform_ray(inv, ray)));
    for v in [&mut tr.sigma, &mut tr.prob, &mut tr.z] {
        v.clear();
    }
    tr.sigma.resize(n * k, T::zero());
    tr.prob.resize(n * k * k, T::zero());
    tr.z.resize(n * k * f, T::zero());
    tr.rgb.clear();
    tr.rgb.resize(n * k, [T::zero(); 3]);
    tr.total.clear();
    tr.ratio.clear();
    tr.trans.clear();

    let mut out = RenderOutput::<T>::background(k);
    let mut optical = T::zero();
    let mut weighted_t = T::zero();
    for i in 0..n {
        let t = samples.t[i];
        let delta = samples.delta[i];
        let mut p_total = T::zero();
        let mut mix = [T::zero(); 3];
        let mut rho = [T::zero(); MAX_PARTS];
        for l in 0..k {
            let idx = i * k + l;
            let vr = &tr.rays[l];
            let z = &mut tr.z[idx * f..(idx + 1) * f];
            let sigma = model.query(vr.at(t), z);
            tr.sigma[idx] = sigma;
            if sigma > T::zero() {
                let p = &mut tr.prob[idx * k..(idx + 1) * k];
                seg.probabilities(z, p);
                let c = model.color(z, vr.direction);
                tr.rgb[idx] = c;
                rho[l] = p[l] * sigma;
                p_total += rho[l];
                for ch in 0..3 {
                    mix[ch] += rho[l] * c[ch];
                }
            }
        }
        let trans = (-optical).exp();
        let ratio = alpha_ratio(p_total, delta);
        let scale = trans * ratio;
        for ch in 0..3 {
            out.color[ch] += scale * mix[ch];
        }
        for l in 0..k {
            out.part_weights[l] += scale * rho[l];
        }
        let w = scale * p_total;
        out.opacity += w;
        weighted_t += w * t;
        optical += p_total * delta;
        tr.total.push(p_total);
        tr.ratio.push(ratio);
        tr.trans.push(trans);
    }
    out.opacity = out.opacity.min(T::one());
    out.depth = weighted_t / out.opacity.max(T::lit(1e-8));
    Ok(out)
}

/// Reverse pass of [`render_ray_composite`].
///
/// Which terms are accumulated follows `grads`: an empty `field` or `head`
/// vector or `motion` list is skipped. Motion gradients are with respect to
/// a left perturbation of each part's inverse motion; part 0 is never
/// accumulated.
pub fn backward_ray_composite<T: Real, S: PartGradient<T> + ?Sized>(
    field: &RadianceField<T>,
    seg: &S,
    samples: &SampleSet<T>,
    trace: &CompositeTrace<T>,
    d_color: [T; 3],
    grads: &mut GradientBuffer<T>,
) {
    if d_color.iter().all(|g| *g == T::zero()) {
        return;
    }
    let k = trace.parts;
    let f = trace.feature_dim;
    let want_field = !grads.field.is_empty();
    let want_head = !grads.head.is_empty() && seg.has_params();
    let want_motion = grads.motion.len() >= k && k > 1;
    let want_point = want_field || want_motion;
    if !want_point && !want_head {
        return;
    }
    let mut suffix = T::zero();
    let mut d_z = [T::zero(); MAX_FEATURES];
    let mut d_zh = [T::zero(); MAX_FEATURES];
    let mut d_prob = [T::zero(); MAX_PARTS];
    for i in (0..samples.len()).rev() {
        let (t, delta) = (samples.t[i], samples.delta[i]);
        let (p_total, ratio, trans) = (trace.total[i], trace.ratio[i], trace.trans[i]);
        let mut g_dot = [T::zero(); MAX_PARTS];
        let mut big_g = T::zero();
        for l in 0..k {
            let idx = i * k + l;
            let c = trace.rgb[idx];
            g_dot[l] = c[0] * d_color[0] + c[1] * d_color[1] + c[2] * d_color[2];
            let s = trace.prob[idx * k + l];
            big_g += s * trace.sigma[idx] * g_dot[l];
        }
        let d_ratio = alpha_ratio_grad(p_total, delta, ratio);
        let shared = trans * d_ratio * big_g - delta * suffix;
        let scale = trans * ratio;
        suffix += scale * big_g;
        for l in 0..k {
            let idx = i * k + l;
            let sigma = trace.sigma[idx];
            if sigma == T::zero() {
                // Outside the field box: no dependence on anything learnable.
                continue;
            }
            let prob = &trace.prob[idx * k..(idx + 1) * k];
            let z = &trace.z[idx * f..(idx + 1) * f];
            let d_rho = shared + scale * g_dot[l];
            if want_head || want_point {
                d_prob[..k].iter_mut().for_each(|v| *v = T::zero());
                d_prob[l] = d_rho * sigma;
            }
            if want_head {
                let zh = if want_point { Some(&mut d_zh[..f]) } else { None };
                let grad = Some(&mut grads.head[..]);
                seg.backward(z, prob, &d_prob[..k], grad, zh);
            } else if want_point {
                seg.backward(z, prob, &d_prob[..k], None, Some(&mut d_zh[..f]));
            }
            if !want_point {
                continue;
            }
            let vr = &trace.rays[l];
            let rho_l = prob[l] * sigma;
            let w = scale * rho_l;
            let d_rgb = [w * d_color[0], w * d_color[1], w * d_color[2]];
            let field_grad = if want_field { Some(&mut grads.field[..]) } else { None };
            let d_dir = field.color_backward(z, vr.direction, trace.rgb[idx], d_rgb, field_grad, &mut d_z);
            for j in 0..f {
                d_z[j] += d_zh[j];
            }
            let x = vr.at(t);
            let field_grad = if want_field { Some(&mut grads.field[..]) } else { None };
            let dx = field.backward_point(x, d_rho * prob[l], &d_z[..f], field_grad);
            if want_motion && l > 0 {
                grads.motion[l].add_point(x, dx);
                grads.motion[l].add_direction(vr.direction, d_dir);
            }
        }
    }
}
