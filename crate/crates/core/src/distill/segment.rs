//! Step 2: the segmentation head, trained photometrically through the
//! part-aware renderer, plus its cross-entropy pre-training on voxel labels.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::voxels::{PartVoxelSet, UNASSIGNED};
use crate::dataio::ObservationSet;
use crate::field::{softmax_in_place, GradientBuffer, PartModel, RadianceField, RadianceModel, SegmentationHead, MAX_FEATURES, MAX_PARTS, MAX_WIDTH};
use crate::geom::Camera;
use crate::optim::{Adam, AdamConfig, StepDecay};
use crate::parallel::{mix_seed, Workers};
use crate::render::{backward_ray_composite, photometric_loss_grad, render_ray_composite, sample_ray_composite, CompositeTrace, PartMotions, SamplingConfig};
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegPhase {
    pub iterations: usize,
    pub rays_per_step: usize,
    pub schedule: StepDecay,
    pub sampling: SamplingConfig,
    pub adam: AdamConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegReport {
    /// Mean loss over the first and the last tenth of the phase.
    pub loss_start: Scalar,
    pub loss_end: Scalar,
}

fn head_and_tail(losses: &[Scalar]) -> (Scalar, Scalar) {
    if losses.is_empty() {
        return (Scalar::NAN, Scalar::NAN);
    }
    let w = (losses.len() / 10).max(1);
    let mean = |s: &[Scalar]| s.iter().sum::<Scalar>() / s.len() as Scalar;
    (mean(&losses[..w]), mean(&losses[losses.len() - w..]))
}

struct SegWorker {
    grads: GradientBuffer<Scalar>,
    trace: CompositeTrace<Scalar>,
}

/// Photometric descent on random target pixels with respect to the head
/// only; field and motions are read but never written.
pub fn optimize_segmentation(
    field: &RadianceField<Scalar>,
    head: &mut SegmentationHead<Scalar>,
    motions: &PartMotions<Scalar>,
    target: &ObservationSet,
    views: &[usize],
    phase: &SegPhase,
    workers: &Workers,
) -> Result<SegReport> {
    if views.is_empty() {
        return Err(Error::invalid("segmentation needs at least one target view"));
    }
    if motions.len() != head.parts() {
        return Err(Error::invalid("one motion per part required"));
    }
    let cameras: Vec<Camera<Scalar>> = views.iter().map(|&v| target.camera(v)).collect::<Result<_>>()?;
    let n = head.params().len();
    let mut adam = Adam::new(n, phase.adam);
    let mut states: Vec<SegWorker> = (0..workers.count())
        .map(|_| SegWorker {
            grads: GradientBuffer {
                field: Vec::new(),
                head: vec![0.0; n],
                motion: Vec::new(),
                loss: 0.0,
            },
            trace: CompositeTrace::default(),
        })
        .collect();
    let pixels = target.width * target.height;
    let batch = phase.rays_per_step;
    let mut losses = Vec::with_capacity(phase.iterations);
    let mut grad = vec![0.0; n];
    for step in 0..phase.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(phase.seed, step as u64));
        let rays: Vec<(usize, usize)> = (0..batch).map(|_| (rng.gen_range(0..views.len()), rng.gen_range(0..pixels))).collect();
        let step_seed = mix_seed(phase.seed ^ 0x5e6, step as u64);
        let h: &SegmentationHead<Scalar> = head;
        workers.for_each_chunk_with(&rays, &mut states, |start, chunk, st| {
            st.grads.zero();
            for (j, &(vi, p)) in chunk.iter().enumerate() {
                let target_rgb = target.color(views[vi], p);
                let cam = &cameras[vi];
                let ray = match cam.pixel_center_ray(p % target.width, p / target.width, field.bounds()) {
                    Ok(Some(r)) => r,
                    _ => {
                        st.grads.loss += target_rgb.iter().map(|c| c * c).sum::<Scalar>() / batch as Scalar;
                        continue;
                    }
                };
                let mut prng = ChaCha8Rng::seed_from_u64(mix_seed(step_seed, (start + j) as u64));
                let samples = sample_ray_composite(field, h, motions.inverses(), &ray, phase.sampling, &mut prng);
                let Ok(out) = render_ray_composite(field, h, motions, &ray, &samples, Some(&mut st.trace)) else {
                    continue;
                };
                st.grads.loss += (0..3).map(|c| (out.color[c] - target_rgb[c]).powi(2)).sum::<Scalar>() / batch as Scalar;
                let g = photometric_loss_grad(out.color, target_rgb, batch);
                backward_ray_composite(field, h, &samples, &st.trace, g, &mut st.grads);
            }
        });
        grad.copy_from_slice(&states[0].grads.head);
        let mut loss = states[0].grads.loss;
        for st in &states[1..] {
            for (a, b) in grad.iter_mut().zip(&st.grads.head) {
                *a += *b;
            }
            loss += st.grads.loss;
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                phase: "segmentation optimization",
                step,
            });
        }
        losses.push(loss);
        adam.step(head.params_mut(), &grad, phase.schedule.at(step));
    }
    let (loss_start, loss_end) = head_and_tail(&losses);
    Ok(SegReport { loss_start, loss_end })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainPhase {
    pub iterations: usize,
    pub learning_rate: f64,
    pub batch: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub loss_start: Scalar,
    pub loss_end: Scalar,
    /// Fraction of labeled cells whose argmax matches their label.
    pub accuracy: Scalar,
}

/// Latents and labels of every labeled cell.
pub fn labeled_latents(field: &RadianceField<Scalar>, voxels: &PartVoxelSet) -> (Vec<Scalar>, Vec<u8>) {
    let f = field.feature_dim();
    let mut z = Vec::new();
    let mut y = Vec::new();
    let mut buf = [0.0; MAX_FEATURES];
    for c in 0..voxels.cell_count() {
        let l = voxels.labels[c];
        if l == UNASSIGNED {
            continue;
        }
        field.query(voxels.center(c), &mut buf);
        z.extend_from_slice(&buf[..f]);
        y.push(l);
    }
    (z, y)
}

/// Share of `(latent, label)` pairs the head classifies correctly.
pub fn label_accuracy(head: &SegmentationHead<Scalar>, z: &[Scalar], y: &[u8]) -> Scalar {
    if y.is_empty() {
        return Scalar::NAN;
    }
    let f = z.len() / y.len();
    let k = head.parts();
    let mut p = [0.0; MAX_PARTS];
    let hits = y
        .iter()
        .enumerate()
        .filter(|(i, l)| {
            head.probabilities(&z[i * f..(i + 1) * f], &mut p);
            let mut best = 0;
            for m in 1..k {
                if p[m] > p[best] {
                    best = m;
                }
            }
            best == **l as usize
        })
        .count();
    hits as Scalar / y.len() as Scalar
}

/// Cross-entropy on minibatches of `(latent, label)` pairs.
pub fn pretrain_on_latents(head: &mut SegmentationHead<Scalar>, z: &[Scalar], y: &[u8], phase: &PretrainPhase) -> Result<PretrainReport> {
    let k = head.parts();
    if y.iter().any(|l| *l as usize >= k) {
        return Err(Error::invalid("pre-training label out of range"));
    }
    if y.is_empty() {
        return Err(Error::invalid("pre-training needs labeled cells"));
    }
    let f = z.len() / y.len();
    let n = head.params().len();
    let mut adam = Adam::new(n, phase.adam);
    let mut rng = ChaCha8Rng::seed_from_u64(phase.seed);
    let mut order: Vec<usize> = (0..y.len()).collect();
    let mut cursor = order.len();
    let batch = phase.batch.max(1).min(y.len());
    let mut losses = Vec::with_capacity(phase.iterations);
    let mut grad = vec![0.0; n];
    let mut hidden = [0.0; MAX_WIDTH];
    let mut logits = [0.0; MAX_PARTS];
    for step in 0..phase.iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            let zi = &z[i * f..(i + 1) * f];
            head.logits(zi, &mut hidden, &mut logits[..k]);
            softmax_in_place(&mut logits[..k]);
            let l = y[i] as usize;
            loss -= logits[l].max(1e-300).ln() / batch as Scalar;
            let mut d = [0.0; MAX_PARTS];
            for m in 0..k {
                d[m] = (logits[m] - if m == l { 1.0 } else { 0.0 }) / batch as Scalar;
            }
            head.backward_logits(zi, &d[..k], Some(&mut grad), None);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                phase: "segmentation pre-training",
                step,
            });
        }
        losses.push(loss);
        adam.step(head.params_mut(), &grad, phase.learning_rate);
    }
    let (loss_start, loss_end) = head_and_tail(&losses);
    Ok(PretrainReport {
        loss_start,
        loss_end,
        accuracy: label_accuracy(head, z, y),
    })
}

/// Pre-trains the head on the labels of `voxels`.
pub fn pretrain_segmentation(field: &RadianceField<Scalar>, head: &mut SegmentationHead<Scalar>, voxels: &PartVoxelSet, phase: &PretrainPhase) -> Result<PretrainReport> {
    let (z, y) = labeled_latents(field, voxels);
    pretrain_on_latents(head, &z, &y, phase)
}
