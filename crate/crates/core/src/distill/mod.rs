//! Stage two: recover part segmentation and per-part rigid motions from a
//! second observation, with the static field frozen.
//!
//! Initialization builds an occupancy grid from the field and tags the cells
//! seen by pixels that vanished in the target views. Each cycle then runs the
//! pose step (2D Chamfer), the segmentation step (photometric, head only) and,
//! once enough segmentation steps have run, a voxel refinement.

mod chamfer;
mod dbscan;
mod pose;
mod segment;
mod voxels;

pub use chamfer::{chamfer_2d, Chamfer, Point2};
pub use dbscan::dbscan;
pub use pose::{build_pose_views, optimize_pose, view_objective, PosePhase, PoseReport, PoseView};
pub use segment::{
    label_accuracy, labeled_latents, optimize_segmentation, pretrain_on_latents, pretrain_segmentation, PretrainPhase, PretrainReport, SegPhase, SegReport,
};
pub use voxels::{
    detect_moved_pixels, extract_occupancy, extract_occupancy_with_delta, initialize_parts, predict_label, refine_voxels, InitParams, InitSummary, MovedPixel, PartVoxelSet,
    RefineParams, RefineSummary,
    SourceView, UNASSIGNED,
};

use serde::{Deserialize, Serialize};

use crate::dataio::{ObservationSet, VoxelRecord};
use crate::field::{hash_params, RadianceField, RadianceModel, SegmentationHead, MAX_PARTS};
use crate::geom::{decompose_motion, JointEstimate, Transform, Twist, DEFAULT_ANGLE_THRESHOLD_DEG};
use crate::metrics::psnr;
use crate::optim::{AdamConfig, StepDecay};
use crate::parallel::{mix_seed, Workers};
use crate::render::{render_image_composite, PartMotions, SamplingConfig};
use crate::staticfit::split_holdout;
use crate::{Error, Result, Scalar};

/// Per-part rigid motions `M_ℓ = exp(ξ_ℓ)`; part 0 is pinned to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidMotion {
    twists: Vec<Twist<Scalar>>,
}

impl RigidMotion {
    /// All parts at the identity.
    pub fn new(parts: usize) -> Result<Self> {
        if parts == 0 || parts > MAX_PARTS {
            return Err(Error::invalid(format!("part count must be in 1..={MAX_PARTS}")));
        }
        Ok(Self {
            twists: vec![Twist::zero(); parts],
        })
    }

    pub fn from_twists(twists: Vec<Twist<Scalar>>) -> Result<Self> {
        if twists.is_empty() || twists.len() > MAX_PARTS {
            return Err(Error::invalid(format!("part count must be in 1..={MAX_PARTS}")));
        }
        if twists[0] != Twist::zero() {
            return Err(Error::invalid("the static part's motion must be the identity"));
        }
        if twists.iter().any(|t| !t.rotation.is_finite() || !t.translation.is_finite()) {
            return Err(Error::invalid("non-finite twist"));
        }
        Ok(Self { twists })
    }

    /// Motions given as transforms; part 0 must be the identity.
    pub fn from_transforms(motions: &[Transform<Scalar>]) -> Result<Self> {
        let mut twists = Vec::with_capacity(motions.len());
        for (l, m) in motions.iter().enumerate() {
            twists.push(if l == 0 { Twist::zero() } else { Twist::log(m)? });
        }
        if let Some(m0) = motions.first() {
            if m0.rotation_angle() > 1e-12 || m0.translation.norm() > 1e-12 {
                return Err(Error::invalid("the static part's motion must be the identity"));
            }
        }
        Self::from_twists(twists)
    }

    pub fn parts(&self) -> usize {
        self.twists.len()
    }

    pub fn twist(&self, part: usize) -> Twist<Scalar> {
        self.twists[part]
    }

    pub fn twists(&self) -> &[Twist<Scalar>] {
        &self.twists
    }

    pub fn set_twist(&mut self, part: usize, t: Twist<Scalar>) -> Result<()> {
        if part == 0 {
            return Err(Error::invalid("the static part cannot move"));
        }
        if !t.rotation.is_finite() || !t.translation.is_finite() {
            return Err(Error::invalid("non-finite twist"));
        }
        self.twists[part] = t;
        Ok(())
    }

    pub fn transforms(&self) -> Vec<Transform<Scalar>> {
        self.twists
            .iter()
            .enumerate()
            .map(|(l, t)| if l == 0 { Transform::identity() } else { t.exp() })
            .collect()
    }

    pub fn part_motions(&self) -> Result<PartMotions<Scalar>> {
        PartMotions::new(self.transforms())
    }

    /// Motions with every twist scaled by `alpha` (articulation interpolation).
    pub fn scaled(&self, alpha: Scalar) -> Self {
        Self {
            twists: self.twists.iter().map(|t| t.scale(alpha)).collect(),
        }
    }

    pub fn param_hash(&self) -> String {
        let flat: Vec<Scalar> = self.twists.iter().flat_map(|t| t.to_array()).collect();
        hash_params(&flat)
    }

    /// Joint parameters of each moving part; `None` for a part that did not move.
    pub fn joints(&self) -> Vec<Option<JointEstimate>> {
        self.transforms()
            .iter()
            .skip(1)
            .map(|m| decompose_motion(m, DEFAULT_ANGLE_THRESHOLD_DEG).ok())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    pub parts: usize,
    pub pose_iters: usize,
    pub seg_iters: usize,
    /// Defaults to 5 for one moving part and 6 otherwise.
    pub cycles: Option<usize>,
    pub pose_lr: f64,
    pub pose_lr_decay: f64,
    pub pose_lr_every: usize,
    /// Target views whose gradients are accumulated per pose step.
    pub pose_views: usize,
    /// Point budget per Chamfer side and view.
    pub max_points: usize,
    pub seg_lr: f64,
    pub seg_lr_decay: f64,
    pub seg_lr_every: usize,
    pub seg_rays: usize,
    pub seg_pretrain_iters: usize,
    pub seg_pretrain_lr: f64,
    pub seg_pretrain_batch: usize,
    pub seg_hidden: usize,
    /// Cumulative segmentation steps before voxel refinement kicks in.
    pub refinement_after_iters: usize,
    pub opacity_threshold: f64,
    /// Moved pixels within this many pixels of the target silhouette are
    /// dropped as edge disagreement.
    pub mask_edge_margin: usize,
    pub occupancy_threshold: f64,
    pub voxel_resolution: usize,
    pub refined_resolution: usize,
    pub dbscan_eps_cells: f64,
    pub dbscan_min_pts: usize,
    /// Share of target views held out for checkpoint selection.
    pub validation_fraction: f64,
    pub sampling: SamplingConfig,
    pub adam: AdamConfig,
    /// Multiplies every iteration count and decay interval.
    pub iteration_scale: f64,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            parts: 2,
            pose_iters: 4000,
            seg_iters: 2000,
            cycles: None,
            pose_lr: 0.01,
            pose_lr_decay: 0.5,
            pose_lr_every: 500,
            pose_views: 8,
            max_points: 4096,
            seg_lr: 0.01,
            seg_lr_decay: 0.99,
            seg_lr_every: 100,
            seg_rays: 1024,
            seg_pretrain_iters: 1000,
            seg_pretrain_lr: 1e-3,
            seg_pretrain_batch: 256,
            seg_hidden: crate::field::DEFAULT_SEG_HIDDEN,
            refinement_after_iters: 2000,
            opacity_threshold: 0.5,
            mask_edge_margin: 1,
            occupancy_threshold: 0.1,
            voxel_resolution: 128,
            refined_resolution: 256,
            dbscan_eps_cells: 2.0,
            dbscan_min_pts: 5,
            validation_fraction: 0.1,
            sampling: SamplingConfig::default(),
            adam: AdamConfig::default(),
            iteration_scale: 1.0,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.parts < 2 {
            return Err(Error::invalid(format!("need ≥ 2 parts, got {}", self.parts)));
        }
        if self.parts > MAX_PARTS {
            return Err(Error::invalid(format!("at most {MAX_PARTS} parts supported")));
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.opacity_threshold) || !unit(self.occupancy_threshold) || !unit(self.validation_fraction) || self.validation_fraction >= 0.5 {
            return Err(Error::invalid("thresholds must lie in (0, 1) and validation_fraction in (0, 0.5)"));
        }
        if self.cycles == Some(0) || self.pose_views == 0 || self.max_points < 2 || self.seg_rays == 0 || self.seg_pretrain_batch == 0 {
            return Err(Error::invalid("cycle, view, point and batch counts must be positive"));
        }
        if self.voxel_resolution == 0 || self.refined_resolution < self.voxel_resolution {
            return Err(Error::invalid("voxel resolutions must be positive and non-decreasing"));
        }
        if !(self.pose_lr > 0.0 && self.seg_lr > 0.0 && self.seg_pretrain_lr > 0.0 && self.pose_lr_decay > 0.0 && self.seg_lr_decay > 0.0) {
            return Err(Error::invalid("learning rates and decays must be positive"));
        }
        if !(self.iteration_scale > 0.0) || !(self.dbscan_eps_cells > 0.0) || self.dbscan_min_pts == 0 {
            return Err(Error::invalid("iteration_scale, dbscan_eps_cells and dbscan_min_pts must be positive"));
        }
        if self.seg_hidden == 0 || self.seg_hidden > crate::field::MAX_WIDTH || self.sampling.n_coarse == 0 {
            return Err(Error::invalid("seg_hidden and n_coarse out of range"));
        }
        Ok(())
    }

    pub fn cycle_count(&self) -> usize {
        self.cycles.unwrap_or(if self.parts == 2 { 5 } else { 6 })
    }

    /// `n` scaled by the iteration multiplier; a positive count stays positive.
    pub fn scaled(&self, n: usize) -> usize {
        if n == 0 {
            0
        } else {
            ((n as f64 * self.iteration_scale).round() as usize).max(1)
        }
    }

    pub fn pose_phase(&self, seed: u64) -> PosePhase {
        PosePhase {
            iterations: self.scaled(self.pose_iters),
            schedule: StepDecay {
                base: self.pose_lr,
                factor: self.pose_lr_decay,
                every: self.scaled(self.pose_lr_every),
            },
            views_per_step: self.pose_views,
            max_points: self.max_points,
            adam: self.adam,
            seed,
        }
    }

    pub fn seg_phase(&self, seed: u64) -> SegPhase {
        SegPhase {
            iterations: self.scaled(self.seg_iters),
            rays_per_step: self.seg_rays,
            schedule: StepDecay {
                base: self.seg_lr,
                factor: self.seg_lr_decay,
                every: self.scaled(self.seg_lr_every),
            },
            sampling: self.sampling,
            adam: self.adam,
            seed,
        }
    }

    pub fn pretrain_phase(&self, seed: u64) -> PretrainPhase {
        PretrainPhase {
            iterations: self.scaled(self.seg_pretrain_iters),
            learning_rate: self.seg_pretrain_lr,
            batch: self.seg_pretrain_batch,
            adam: self.adam,
            seed,
        }
    }
}

/// Hashes around each phase; the decoupling contract holds when every pair matches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseAudit {
    pub head_before_pose: String,
    pub head_after_pose: String,
    pub twists_before_seg: String,
    pub twists_after_seg: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub field_before: String,
    pub field_after: String,
    pub phases: Vec<PhaseAudit>,
}

impl Audit {
    pub fn field_unchanged(&self) -> bool {
        self.field_before == self.field_after
    }

    pub fn pose_phases_leave_head(&self) -> bool {
        self.phases.iter().all(|p| p.head_before_pose == p.head_after_pose)
    }

    pub fn seg_phases_leave_twists(&self) -> bool {
        self.phases.iter().all(|p| p.twists_before_seg == p.twists_after_seg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: usize,
    pub pose: PoseReport,
    pub seg: SegReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine: Option<RefineSummary>,
    pub validation_psnr: Scalar,
    pub best_psnr: Scalar,
    pub part_cells: Vec<usize>,
    /// Twists after the pose phase of this cycle.
    pub twists: Vec<[Scalar; 6]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub parts: usize,
    pub seed: u64,
    pub workers: usize,
    pub train_views: Vec<usize>,
    pub validation_views: Vec<usize>,
    pub init: InitSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PretrainReport>,
    pub cycles: Vec<CycleReport>,
    pub best_cycle: usize,
    pub best_psnr: Scalar,
    pub flags: Vec<String>,
    pub audit: Audit,
    /// Joint estimate per moving part of the selected checkpoint.
    pub joints: Vec<Option<JointEstimate>>,
    pub twists: Vec<[Scalar; 6]>,
}

#[derive(Clone, Debug)]
pub struct DistillOutput {
    pub motion: RigidMotion,
    pub head: SegmentationHead<Scalar>,
    pub voxels: PartVoxelSet,
    pub report: DistillReport,
}

impl PartVoxelSet {
    /// Compact record of the labeled cells.
    pub fn record(&self) -> VoxelRecord {
        VoxelRecord {
            resolution: self.resolution,
            cells: (0..self.cell_count())
                .filter(|&c| self.labels[c] != UNASSIGNED)
                .map(|c| (c as u32, self.labels[c]))
                .collect(),
        }
    }
}

/// Composite-render PSNR over the listed target views, pooled over pixels.
pub fn composite_psnr(
    field: &RadianceField<Scalar>,
    head: &SegmentationHead<Scalar>,
    motion: &RigidMotion,
    target: &ObservationSet,
    views: &[usize],
    sampling: SamplingConfig,
    seed: u64,
    workers: &Workers,
) -> Result<Scalar> {
    let motions = motion.part_motions()?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &v in views {
        let img = render_image_composite(field, head, &motions, &target.camera(v)?, sampling, mix_seed(seed, v as u64), workers)?;
        a.extend(img.rgb().into_iter().flatten());
        b.extend((0..target.width * target.height).flat_map(|p| target.color(v, p)));
    }
    psnr(&a, &b)
}

/// Runs initialization and the alternating cycles; returns the state with
/// the best validation PSNR.
pub fn distill(field: &RadianceField<Scalar>, target: &ObservationSet, cfg: &DistillConfig, workers: &Workers) -> Result<DistillOutput> {
    cfg.validate()?;
    target.validate()?;
    let k = cfg.parts;
    let field_before = field.param_hash();
    let (train, validation) = split_holdout(target.len(), cfg.validation_fraction, cfg.seed)?;
    let train_obs = target.select(&train);

    let mut sources = Vec::with_capacity(train.len());
    for (i, &v) in train.iter().enumerate() {
        let cam = target.camera(v)?;
        sources.push(detect_moved_pixels(
            field,
            &cam,
            &target.views[v].mask,
            cfg.opacity_threshold,
            cfg.mask_edge_margin,
            cfg.sampling,
            mix_seed(cfg.seed ^ 0x50c, i as u64),
            workers,
        )?);
    }
    let occupancy = extract_occupancy(field, *field.bounds(), cfg.voxel_resolution, cfg.occupancy_threshold, k, workers)?;
    let (mut voxels, init) = initialize_parts(
        &occupancy,
        &train_obs,
        &sources,
        InitParams {
            parts: k,
            dbscan_eps_cells: cfg.dbscan_eps_cells,
            dbscan_min_pts: cfg.dbscan_min_pts,
        },
    )?;
    log::info!("distill: {} moved pixels, part cells {:?}", init.moved_pixels, init.part_cells);

    let mut head = SegmentationHead::new(field.feature_dim(), cfg.seg_hidden, k, mix_seed(cfg.seed, 0x4ead));
    let pretrain = if k > 2 {
        Some(pretrain_segmentation(field, &mut head, &voxels, &cfg.pretrain_phase(mix_seed(cfg.seed, 0x9e7)))?)
    } else {
        None
    };

    let all_train: Vec<usize> = (0..train.len()).collect();
    let pose_views = build_pose_views(&train_obs, &all_train, &sources, cfg.max_points, mix_seed(cfg.seed, 0x9051))?;
    let mut motion = RigidMotion::new(k)?;
    let mut flags = Vec::new();
    let mut audit = Audit {
        field_before,
        ..Default::default()
    };
    let mut cycles = Vec::new();
    let mut best: Option<(Scalar, usize, RigidMotion, SegmentationHead<Scalar>, PartVoxelSet)> = None;
    let mut seg_done = 0;
    let coarse_edge = (field.bounds().max.x - field.bounds().min.x) / cfg.voxel_resolution as Scalar;
    let val_seed = mix_seed(cfg.seed, 0x7a1);
    for cycle in 0..cfg.cycle_count() {
        let cseed = mix_seed(cfg.seed, 1000 + cycle as u64);
        let points: Vec<_> = (0..k).map(|l| if l == 0 { Vec::new() } else { voxels.points(l) }).collect();
        let mut pa = PhaseAudit {
            head_before_pose: head.param_hash(),
            ..Default::default()
        };
        let pose = optimize_pose(&pose_views, &points, &mut motion, &cfg.pose_phase(mix_seed(cseed, 1)), workers)?;
        pa.head_after_pose = head.param_hash();
        pa.twists_before_seg = motion.param_hash();
        let seg_phase = cfg.seg_phase(mix_seed(cseed, 2));
        let seg = optimize_segmentation(field, &mut head, &motion.part_motions()?, target, &train, &seg_phase, workers)?;
        pa.twists_after_seg = motion.param_hash();
        audit.phases.push(pa);
        seg_done += seg_phase.iterations;
        let mut refine = None;
        if seg_done >= cfg.scaled(cfg.refinement_after_iters) {
            let params = RefineParams {
                resolution: cfg.refined_resolution,
                occupancy_threshold: cfg.occupancy_threshold,
                occupancy_delta: coarse_edge,
                tolerance: coarse_edge,
            };
            let (next, summary) = refine_voxels(field, &head, &voxels, params, workers)?;
            for l in &summary.kept_previous {
                flags.push(format!("cycle {}: refinement left part {l} empty; kept previous cells", cycle + 1));
            }
            voxels = next;
            refine = Some(summary);
        }
        let validation_psnr = composite_psnr(field, &head, &motion, target, &validation, cfg.sampling, val_seed, workers)?;
        if best.as_ref().map_or(true, |b| validation_psnr > b.0) {
            best = Some((validation_psnr, cycle, motion.clone(), head.clone(), voxels.clone()));
        }
        let best_psnr = best.as_ref().map_or(Scalar::NAN, |b| b.0);
        log::info!(
            "cycle {}: chamfer {:.3} -> {:.3}, photometric {:.5} -> {:.5}, validation PSNR {validation_psnr:.2} dB",
            cycle + 1,
            pose.loss_start,
            pose.loss_end,
            seg.loss_start,
            seg.loss_end
        );
        cycles.push(CycleReport {
            cycle: cycle + 1,
            pose,
            seg,
            refine,
            validation_psnr,
            best_psnr,
            part_cells: voxels.part_counts(),
            twists: motion.twists().iter().map(|t| t.to_array()).collect(),
        });
    }
    audit.field_after = field.param_hash();
    if !audit.field_unchanged() {
        flags.push("static field parameters changed during distillation".into());
    }
    let (best_psnr, best_cycle, motion, head, voxels) = best.ok_or_else(|| Error::invalid("no distillation cycle ran"))?;
    let report = DistillReport {
        parts: k,
        seed: cfg.seed,
        workers: workers.count(),
        train_views: train,
        validation_views: validation,
        init,
        pretrain,
        cycles,
        best_cycle: best_cycle + 1,
        best_psnr,
        flags,
        audit,
        joints: motion.joints(),
        twists: motion.twists().iter().map(|t| t.to_array()).collect(),
    };
    Ok(DistillOutput { motion, head, voxels, report })
}
