//! Stage one: fit the radiance field to the source observation, then freeze it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::ObservationSet;
use crate::field::{FieldShape, RadianceField, RadianceModel};
use crate::geom::{Aabb, Camera};
use crate::metrics::psnr;
use crate::optim::{Adam, AdamConfig, StepDecay};
use crate::parallel::{mix_seed, Workers};
use crate::render::{backward_ray, photometric_loss_grad, render_image, render_ray_traced, sample_ray, RayTrace, SamplingConfig};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub iterations: usize,
    pub rays_per_step: usize,
    pub learning_rate: f64,
    /// Grid parameters step at `learning_rate × grid_lr_scale`.
    pub grid_lr_scale: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub holdout_fraction: f64,
    /// Steps between held-out evaluations.
    pub eval_every: usize,
    pub sampling: SamplingConfig,
    pub shape: FieldShape,
    /// Composite each training ray over a random background color so that
    /// empty space cannot hide as black density.
    pub random_background: bool,
    /// Window of the loss moving average used by the divergence check.
    pub divergence_window: usize,
    /// Relative rise of the moving average over 500 steps that counts as divergence.
    pub divergence_tolerance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            rays_per_step: 1024,
            learning_rate: 1e-2,
            grid_lr_scale: 10.0,
            lr_decay_factor: 0.5,
            lr_decay_every: 1000,
            adam: AdamConfig::default(),
            seed: 0,
            holdout_fraction: 0.1,
            eval_every: 200,
            sampling: SamplingConfig::default(),
            shape: FieldShape::default(),
            random_background: true,
            divergence_window: 100,
            divergence_tolerance: 0.05,
        }
    }
}

/// Steps between the two moving averages compared by the divergence check.
pub const DIVERGENCE_SPAN: usize = 500;

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rays_per_step == 0 || self.eval_every == 0 || self.divergence_window == 0 {
            return Err(Error::invalid("rays_per_step, eval_every and divergence_window must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.grid_lr_scale > 0.0) || !(self.lr_decay_factor > 0.0) || self.lr_decay_every == 0 {
            return Err(Error::invalid("learning rate and its decay must be positive"));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 0.5) {
            return Err(Error::invalid("holdout_fraction must lie in (0, 0.5)"));
        }
        if self.sampling.n_coarse == 0 {
            return Err(Error::invalid("n_coarse must be positive"));
        }
        if self.shape.resolution < 2 || self.shape.feature_dim == 0 || self.shape.feature_dim > crate::field::MAX_FEATURES {
            return Err(Error::invalid("field shape out of range"));
        }
        if self.shape.color_hidden == 0 || self.shape.color_hidden > crate::field::MAX_WIDTH {
            return Err(Error::invalid("color head width out of range"));
        }
        Ok(())
    }

    pub fn schedule(&self) -> StepDecay {
        StepDecay {
            base: self.learning_rate,
            factor: self.lr_decay_factor,
            every: self.lr_decay_every,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub loss: f64,
    pub holdout_psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub final_loss: f64,
    pub holdout_psnr: f64,
    pub steps: usize,
    pub seed: u64,
    pub workers: usize,
    pub train_views: Vec<usize>,
    pub holdout_views: Vec<usize>,
    pub history: Vec<EvalPoint>,
    pub diverged: bool,
    pub field_hash: String,
}

/// Deterministic split into (train, holdout) view indices, both sorted.
/// At least one view lands on each side.
pub fn split_holdout(n: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 views, got {n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x401d)));
    let h = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut hold = idx[..h].to_vec();
    let mut train = idx[h..].to_vec();
    hold.sort_unstable();
    train.sort_unstable();
    Ok((train, hold))
}

/// PSNR of the field's renders against the listed views, pooled over pixels.
pub fn views_psnr(field: &RadianceField<Scalar>, data: &ObservationSet, views: &[usize], sampling: SamplingConfig, seed: u64, workers: &Workers) -> Result<f64> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &v in views {
        let img = render_image(field, &data.camera(v)?, sampling, mix_seed(seed, v as u64), workers)?;
        a.extend(img.rgb().into_iter().flatten());
        b.extend((0..data.width * data.height).flat_map(|p| data.color(v, p)));
    }
    psnr(&a, &b)
}

/// Moving-average divergence rule: the mean loss over the trailing window
/// may not exceed the mean `DIVERGENCE_SPAN` steps earlier by more than the
/// tolerance.
pub fn detect_divergence(losses: &[f64], window: usize, tolerance: f64) -> bool {
    if losses.len() < DIVERGENCE_SPAN + window {
        return false;
    }
    let mut prefix = vec![0.0; losses.len() + 1];
    for (i, l) in losses.iter().enumerate() {
        prefix[i + 1] = prefix[i] + l;
    }
    let avg = |end: usize| (prefix[end] - prefix[end - window]) / window as f64;
    (DIVERGENCE_SPAN + window..=losses.len()).any(|end| avg(end) > avg(end - DIVERGENCE_SPAN) * (1.0 + tolerance))
}

struct WorkerState {
    grad: Vec<Scalar>,
    loss: Scalar,
    trace: RayTrace<Scalar>,
}

/// Trains a fresh field on `data` and returns it frozen.
pub fn fit_static(data: &ObservationSet, cfg: &FitConfig, workers: &Workers) -> Result<(RadianceField<Scalar>, FitReport)> {
    cfg.validate()?;
    data.validate()?;
    let (train, holdout) = split_holdout(data.len(), cfg.holdout_fraction, cfg.seed)?;
    let cameras: Vec<Camera<Scalar>> = (0..data.len()).map(|i| data.camera(i)).collect::<Result<_>>()?;
    let mut field = RadianceField::new(Aabb::unit_cube(), cfg.shape, cfg.seed);
    let n_params = field.param_count();
    let n_grid = field.grid_param_count();
    let mut adam_grid = Adam::new(n_grid, cfg.adam);
    let mut adam_color = Adam::new(n_params - n_grid, cfg.adam);
    let schedule = cfg.schedule();
    let pixels = data.width * data.height;
    let mut states: Vec<WorkerState> = (0..workers.count())
        .map(|_| WorkerState {
            grad: vec![0.0; n_params],
            loss: 0.0,
            trace: RayTrace::default(),
        })
        .collect();
    let mut grad = vec![0.0; n_params];
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut history = Vec::new();
    let eval_seed = mix_seed(cfg.seed, 0xe7a1);
    let batch = cfg.rays_per_step;
    for step in 0..cfg.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, step as u64));
        let rays: Vec<(usize, usize, [Scalar; 3])> = (0..batch)
            .map(|_| {
                let v = train[rng.gen_range(0..train.len())];
                let p = rng.gen_range(0..pixels);
                let bg = if cfg.random_background { [rng.gen(), rng.gen(), rng.gen()] } else { [0.0; 3] };
                (v, p, bg)
            })
            .collect();
        let step_seed = mix_seed(cfg.seed ^ 0x5eed, step as u64);
        let f = &field;
        workers.for_each_chunk_with(&rays, &mut states, |start, chunk, st| {
            st.grad.iter_mut().for_each(|g| *g = 0.0);
            st.loss = 0.0;
            for (j, &(v, p, bg)) in chunk.iter().enumerate() {
                let c = data.color(v, p);
                let m = data.views[v].mask[p] as Scalar;
                let target = [0, 1, 2].map(|ch| c[ch] + (1.0 - m) * bg[ch]);
                let cam = &cameras[v];
                let Ok(Some(ray)) = cam.pixel_center_ray(p % data.width, p / data.width, f.bounds()) else {
                    // background-only ray: the render is the background itself
                    st.loss += (0..3).map(|ch| (bg[ch] - target[ch]).powi(2)).sum::<Scalar>() / batch as Scalar;
                    continue;
                };
                let mut prng = ChaCha8Rng::seed_from_u64(mix_seed(step_seed, (start + j) as u64));
                let samples = sample_ray(f, &ray, cfg.sampling, &mut prng);
                let out = render_ray_traced(f, &ray, &samples, &mut st.trace);
                let rendered = [0, 1, 2].map(|ch| out.color[ch] + (1.0 - out.opacity) * bg[ch]);
                st.loss += (0..3).map(|ch| (rendered[ch] - target[ch]).powi(2)).sum::<Scalar>() / batch as Scalar;
                let g = photometric_loss_grad(rendered, target, batch);
                let d_opacity = -(0..3).map(|ch| g[ch] * bg[ch]).sum::<Scalar>();
                backward_ray(f, &ray, &samples, &st.trace, g, d_opacity, &mut st.grad);
            }
        });
        grad.copy_from_slice(&states[0].grad);
        let mut loss = states[0].loss;
        for st in &states[1..] {
            for (a, b) in grad.iter_mut().zip(&st.grad) {
                *a += *b;
            }
            loss += st.loss;
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { phase: "static fit", step });
        }
        losses.push(loss);
        let lr = schedule.at(step);
        let (pg, pc) = field.params_mut().split_at_mut(n_grid);
        adam_grid.step(pg, &grad[..n_grid], lr * cfg.grid_lr_scale);
        adam_color.step(pc, &grad[n_grid..], lr);
        if (step + 1) % cfg.eval_every == 0 && step + 1 < cfg.iterations {
            let p = views_psnr(&field, data, &holdout, cfg.sampling, eval_seed, workers)?;
            log::info!("static fit step {}: loss {loss:.5}, holdout PSNR {p:.2} dB", step + 1);
            history.push(EvalPoint {
                step: step + 1,
                loss,
                holdout_psnr: p,
            });
        }
    }
    let holdout_psnr = views_psnr(&field, data, &holdout, cfg.sampling, eval_seed, workers)?;
    let final_loss = losses.last().copied().unwrap_or(Scalar::NAN);
    history.push(EvalPoint {
        step: cfg.iterations,
        loss: final_loss,
        holdout_psnr,
    });
    let diverged = detect_divergence(&losses, cfg.divergence_window, cfg.divergence_tolerance);
    if diverged {
        log::warn!("static fit: training loss rose over a {DIVERGENCE_SPAN}-step window");
    }
    field.freeze();
    let report = FitReport {
        final_loss,
        holdout_psnr,
        steps: cfg.iterations,
        seed: cfg.seed,
        workers: workers.count(),
        train_views: train,
        holdout_views: holdout,
        history,
        diverged,
        field_hash: field.param_hash(),
    };
    Ok((field, report))
}
