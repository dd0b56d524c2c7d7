//! Step 1: part poses from 2D Chamfer alignment of projected part cells
//! with the target foreground masks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chamfer::{chamfer_2d, Point2};
use super::voxels::SourceView;
use super::RigidMotion;
use crate::dataio::ObservationSet;
use crate::geom::{Camera, LocalGrad, Transform, Vec3};
use crate::optim::{Adam, AdamConfig, StepDecay};
use crate::parallel::{mix_seed, Workers};
use crate::{Error, Result, Scalar};

/// Fixed per-view data of the pose objective.
#[derive(Clone, Debug)]
pub struct PoseView {
    pub view: usize,
    pub camera: Camera<Scalar>,
    /// Static-part pixels: source-render foreground that stays foreground.
    pub static_pts: Vec<Point2>,
    /// Foreground pixels of the target mask.
    pub target_pts: Vec<Point2>,
}

fn pixel_center(p: usize, width: usize) -> Point2 {
    [(p % width) as Scalar + 0.5, (p / width) as Scalar + 0.5]
}

fn subsample<T: Clone>(items: &[T], max: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    if items.len() <= max {
        return items.to_vec();
    }
    let mut idx = sample(rng, items.len(), max).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}

/// Builds the pose objective for the listed target views. `sources[v]` is the
/// source-state render of target view `v`. The static side keeps at most half
/// of `max_points`; the target side at most `max_points`.
pub fn build_pose_views(target: &ObservationSet, views: &[usize], sources: &[SourceView], max_points: usize, seed: u64) -> Result<Vec<PoseView>> {
    views
        .iter()
        .map(|&v| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, v as u64));
            let mask = &target.views[v].mask;
            let src = &sources[v];
            let stat: Vec<Point2> = (0..mask.len())
                .filter(|&p| src.foreground[p] && mask[p] == 1)
                .map(|p| pixel_center(p, target.width))
                .collect();
            let tgt: Vec<Point2> = (0..mask.len()).filter(|&p| mask[p] == 1).map(|p| pixel_center(p, target.width)).collect();
            Ok(PoseView {
                view: v,
                camera: target.camera(v)?,
                static_pts: subsample(&stat, max_points / 2, &mut rng),
                target_pts: subsample(&tgt, max_points, &mut rng),
            })
        })
        .collect()
}

/// Chamfer loss of one view and the left-perturbation gradient for each
/// moving part. `None` when no moving point lands in front of the camera or
/// either side is empty.
pub fn view_objective(view: &PoseView, part_points: &[Vec<Vec3<Scalar>>], motions: &[Transform<Scalar>]) -> Result<Option<(Scalar, Vec<LocalGrad<Scalar>>)>> {
    let mut u = view.static_pts.clone();
    let n_static = u.len();
    let mut owners: Vec<(usize, Vec3<Scalar>, [Vec3<Scalar>; 2])> = Vec::new();
    for (l, pts) in part_points.iter().enumerate().skip(1) {
        for x in pts {
            let y = motions[l].apply_point(*x);
            if let Some((p, jac)) = view.camera.project_world_with_jacobian(y) {
                u.push([p.u, p.v]);
                owners.push((l, y, jac));
            }
        }
    }
    if owners.is_empty() || view.target_pts.is_empty() {
        return Ok(None);
    }
    let c = chamfer_2d(&u, &view.target_pts)?;
    let mut grads = vec![LocalGrad::default(); part_points.len()];
    for (i, (l, y, jac)) in owners.iter().enumerate() {
        let g = c.grad[n_static + i];
        let gy = jac[0] * g[0] + jac[1] * g[1];
        grads[*l].add_point(*y, gy);
    }
    Ok(Some((c.loss, grads)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosePhase {
    pub iterations: usize,
    pub schedule: StepDecay,
    pub views_per_step: usize,
    pub max_points: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseReport {
    /// Mean Chamfer loss over the views of the first and last step.
    pub loss_start: Scalar,
    pub loss_end: Scalar,
    pub skipped_views: usize,
}

/// Optimizes the twists of the moving parts; the static part stays at the
/// identity and nothing else is touched.
pub fn optimize_pose(
    views: &[PoseView],
    part_points: &[Vec<Vec3<Scalar>>],
    motion: &mut RigidMotion,
    phase: &PosePhase,
    workers: &Workers,
) -> Result<PoseReport> {
    let k = motion.parts();
    if part_points.len() != k {
        return Err(Error::invalid("one point set per part required"));
    }
    if views.is_empty() {
        return Err(Error::invalid("pose optimization needs at least one view"));
    }
    let mut adam = Adam::new(6 * (k - 1), phase.adam);
    let mut params: Vec<Scalar> = (1..k).flat_map(|l| motion.twist(l).to_array()).collect();
    let mut report = PoseReport {
        loss_start: Scalar::NAN,
        loss_end: Scalar::NAN,
        skipped_views: 0,
    };
    for step in 0..phase.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(phase.seed, step as u64));
        let m = phase.views_per_step.min(views.len());
        let mut chosen = sample(&mut rng, views.len(), m).into_vec();
        chosen.sort_unstable();
        let budget = phase.max_points;
        let picks: Vec<(usize, Vec<Vec<Vec3<Scalar>>>)> = chosen
            .iter()
            .map(|&vi| {
                let per_part = budget.saturating_sub(views[vi].static_pts.len()).max(1) / (k - 1).max(1);
                let sub = part_points
                    .iter()
                    .enumerate()
                    .map(|(l, pts)| if l == 0 { Vec::new() } else { subsample(pts, per_part.max(1), &mut rng) })
                    .collect();
                (vi, sub)
            })
            .collect();
        let transforms = motion.transforms();
        let results = workers.map_indices(picks.len(), |i| view_objective(&views[picks[i].0], &picks[i].1, &transforms));
        let mut local = vec![LocalGrad::default(); k];
        let mut loss = 0.0;
        let mut used = 0;
        for r in results {
            match r? {
                Some((l, g)) => {
                    loss += l;
                    used += 1;
                    for (a, b) in local.iter_mut().zip(&g) {
                        a.merge(b);
                    }
                }
                None => report.skipped_views += 1,
            }
        }
        if used == 0 {
            log::warn!("pose step {step}: no view had projected part points");
            continue;
        }
        let loss = loss / used as Scalar;
        if !loss.is_finite() {
            return Err(Error::NonFinite { phase: "pose optimization", step });
        }
        if step == 0 {
            report.loss_start = loss;
        }
        report.loss_end = loss;
        let mut grad = vec![0.0; params.len()];
        for l in 1..k {
            let g = motion.twist(l).pull_back(local[l].to_array());
            grad[6 * (l - 1)..6 * l].copy_from_slice(&g);
        }
        adam.step(&mut params, &grad, phase.schedule.at(step));
        for l in 1..k {
            let mut a = [0.0; 6];
            a.copy_from_slice(&params[6 * (l - 1)..6 * l]);
            motion.set_twist(l, crate::geom::Twist::from_array(a))?;
        }
    }
    Ok(report)
}
