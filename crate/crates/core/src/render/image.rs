//! Whole-image rendering, parallel over pixels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{render_ray, render_ray_composite, sample_ray, sample_ray_composite, PartMotions, RenderOutput, SamplingConfig};
use crate::field::{PartModel, RadianceModel};
use crate::geom::Camera;
use crate::parallel::{mix_seed, Workers};
use crate::{Real, Result};

/// Label of pixels with opacity below 0.5.
pub const BACKGROUND_LABEL: u8 = 0;

/// Row-major rendered image.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage<T> {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<RenderOutput<T>>,
}

impl<T: Real> RenderedImage<T> {
    pub fn rgb(&self) -> Vec<[T; 3]> {
        self.pixels.iter().map(|p| p.color).collect()
    }

    pub fn opacity(&self) -> Vec<T> {
        self.pixels.iter().map(|p| p.opacity).collect()
    }

    pub fn depth(&self) -> Vec<T> {
        self.pixels.iter().map(|p| p.depth).collect()
    }

    /// `0` for background, `ℓ + 1` for part `ℓ`.
    pub fn labels(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| p.label().map_or(BACKGROUND_LABEL, |l| l as u8 + 1)).collect()
    }
}

fn pixel_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64))
}

/// Renders every pixel center. Each pixel has its own sampler stream, so
/// the result does not depend on the worker count.
pub fn render_image<T: Real, M: RadianceModel<T> + ?Sized>(
    model: &M,
    cam: &Camera<T>,
    cfg: SamplingConfig,
    seed: u64,
    workers: &Workers,
) -> Result<RenderedImage<T>> {
    let (w, h) = (cam.width, cam.height);
    let pixels: Result<Vec<_>> = workers
        .map_indices(w * h, |idx| {
            let Some(ray) = cam.pixel_center_ray(idx % w, idx / w, model.bounds())? else {
                return Ok(RenderOutput::background(1));
            };
            let samples = sample_ray(model, &ray, cfg, &mut pixel_rng(seed, idx));
            Ok(render_ray(model, &ray, &samples))
        })
        .into_iter()
        .collect();
    Ok(RenderedImage { width: w, height: h, pixels: pixels? })
}

pub fn render_image_composite<T: Real, M: RadianceModel<T> + ?Sized, S: PartModel<T> + ?Sized>(
    model: &M,
    seg: &S,
    motions: &PartMotions<T>,
    cam: &Camera<T>,
    cfg: SamplingConfig,
    seed: u64,
    workers: &Workers,
) -> Result<RenderedImage<T>> {
    let (w, h) = (cam.width, cam.height);
    let k = seg.parts();
    let pixels: Result<Vec<_>> = workers
        .map_indices(w * h, |idx| {
            let Some(ray) = cam.pixel_center_ray(idx % w, idx / w, model.bounds())? else {
                return Ok(RenderOutput::background(k));
            };
            let mut rng = pixel_rng(seed, idx);
            let samples = sample_ray_composite(model, seg, motions.inverses(), &ray, cfg, &mut rng);
            render_ray_composite(model, seg, motions, &ray, &samples, None)
        })
        .into_iter()
        .collect();
    Ok(RenderedImage { width: w, height: h, pixels: pixels? })
}

/// Per-pixel argmax of accumulated part weights; `0` is background.
pub fn render_semantic<T: Real, M: RadianceModel<T> + ?Sized, S: PartModel<T> + ?Sized>(
    model: &M,
    seg: &S,
    motions: &PartMotions<T>,
    cam: &Camera<T>,
    cfg: SamplingConfig,
    seed: u64,
    workers: &Workers,
) -> Result<Vec<u8>> {
    Ok(render_image_composite(model, seg, motions, cam, cfg, seed, workers)?.labels())
}
