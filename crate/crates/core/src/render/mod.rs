//! Differentiable volume rendering: plain, part-aware composite, semantic.

mod composite;
mod image;
mod loss;
mod sampling;
mod volume;

pub use composite::{backward_ray_composite, render_ray_composite, CompositeTrace, PartMotions};
pub use image::{
    render_image, render_image_composite, render_semantic, RenderedImage, BACKGROUND_LABEL,
};
pub use loss::{photometric_loss, photometric_loss_grad};
pub use sampling::{
    importance_samples, sample_ray, sample_ray_composite, stratified, SampleSet, SamplingConfig,
};
pub use volume::{backward_ray, render_ray, render_ray_traced, RayTrace};

use crate::field::{PartModel, SegmentationHead, WholeObject, MAX_PARTS};
use crate::Real;

/// Result of rendering one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOutput<T> {
    pub color: [T; 3],
    pub opacity: T,
    /// Expected termination distance.
    pub depth: T,
    parts: usize,
    part_weights: [T; MAX_PARTS],
}

impl<T: Real> RenderOutput<T> {
    /// Output of a ray that misses the scene.
    pub fn background(parts: usize) -> Self {
        Self {
            color: [T::zero(); 3],
            opacity: T::zero(),
            depth: T::zero(),
            parts,
            part_weights: [T::zero(); MAX_PARTS],
        }
    }

    /// Accumulated rendering weight of each part.
    pub fn part_weights(&self) -> &[T] {
        &self.part_weights[..self.parts]
    }

    /// Index of the dominant part, or `None` when opacity is below 0.5.
    pub fn label(&self) -> Option<usize> {
        if !(self.opacity >= T::half()) {
            return None;
        }
        let mut best = 0;
        for (l, w) in self.part_weights().iter().enumerate() {
            if *w > self.part_weights[best] {
                best = l;
            }
        }
        Some(best)
    }
}

/// Part model with a reverse pass through its probabilities.
pub trait PartGradient<T: Real>: PartModel<T> {
    /// Whether any learnable parameters exist.
    fn has_params(&self) -> bool;

    /// Given `∂L/∂p`, accumulates parameter gradients and writes `∂L/∂z`.
    fn backward(&self, z: &[T], prob: &[T], d_prob: &[T], grad: Option<&mut [T]>, d_z: Option<&mut [T]>);
}

impl<T: Real> PartGradient<T> for WholeObject {
    fn has_params(&self) -> bool {
        false
    }

    fn backward(&self, _z: &[T], _prob: &[T], _d_prob: &[T], _grad: Option<&mut [T]>, d_z: Option<&mut [T]>) {
        if let Some(d) = d_z {
            d.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

impl<T: Real> PartGradient<T> for SegmentationHead<T> {
    fn has_params(&self) -> bool {
        true
    }

    fn backward(&self, z: &[T], prob: &[T], d_prob: &[T], grad: Option<&mut [T]>, d_z: Option<&mut [T]>) {
        SegmentationHead::backward(self, z, prob, d_prob, grad, d_z)
    }
}
