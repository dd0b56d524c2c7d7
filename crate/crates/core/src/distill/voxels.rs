//! Auxiliary voxel grid: occupancy of the frozen field, part labels, and the
//! per-part cell coordinates used by the pose step.

use std::collections::HashSet;

use crate::dataio::ObservationSet;
use crate::field::{PartModel, RadianceField, RadianceModel, SegmentationHead, MAX_FEATURES, MAX_PARTS};
use crate::geom::{Aabb, Camera, Vec3};
use crate::parallel::Workers;
use crate::render::{render_image, SamplingConfig};
use crate::{Error, Result, Scalar};

use super::dbscan::dbscan;

/// Label of an occupied cell that belongs to no part yet.
pub const UNASSIGNED: u8 = u8::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct PartVoxelSet {
    pub resolution: usize,
    pub bounds: Aabb<Scalar>,
    pub occupied: Vec<bool>,
    /// Part per cell; [`UNASSIGNED`] for free or unassigned cells.
    pub labels: Vec<u8>,
    pub parts: usize,
}

impl PartVoxelSet {
    pub fn cell_count(&self) -> usize {
        self.resolution.pow(3)
    }

    /// Cell edge length.
    pub fn spacing(&self) -> Scalar {
        (self.bounds.max.x - self.bounds.min.x) / self.resolution as Scalar
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let r = self.resolution;
        (idx % r, (idx / r) % r, idx / (r * r))
    }

    pub fn center(&self, idx: usize) -> Vec3<Scalar> {
        let (i, j, k) = self.coords(idx);
        let h = self.spacing();
        self.bounds.min + Vec3::new(i as Scalar + 0.5, j as Scalar + 0.5, k as Scalar + 0.5) * h
    }

    /// Cell containing `x`, if inside the bounds.
    pub fn cell_of(&self, x: Vec3<Scalar>) -> Option<usize> {
        let h = self.spacing();
        let rel = (x - self.bounds.min) * (1.0 / h);
        let r = self.resolution as Scalar;
        if !(rel.x >= 0.0 && rel.y >= 0.0 && rel.z >= 0.0 && rel.x < r && rel.y < r && rel.z < r) {
            return None;
        }
        Some(self.index(rel.x as usize, rel.y as usize, rel.z as usize))
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|o| **o).count()
    }

    /// Cell indices carrying `label`, ascending.
    pub fn cells_of(&self, label: u8) -> Vec<usize> {
        (0..self.cell_count()).filter(|&c| self.labels[c] == label).collect()
    }

    /// World-space centers of part `part`'s cells (the matrix `X_ℓ`).
    pub fn points(&self, part: usize) -> Vec<Vec3<Scalar>> {
        self.cells_of(part as u8).into_iter().map(|c| self.center(c)).collect()
    }

    pub fn part_counts(&self) -> Vec<usize> {
        let mut n = vec![0; self.parts];
        for l in &self.labels {
            if (*l as usize) < self.parts {
                n[*l as usize] += 1;
            }
        }
        n
    }

    /// Every labeled cell is occupied.
    pub fn check(&self) -> Result<()> {
        for (c, l) in self.labels.iter().enumerate() {
            if *l != UNASSIGNED && (!self.occupied[c] || *l as usize >= self.parts) {
                return Err(Error::invalid(format!("voxel {c} carries label {l} but is free or out of range")));
            }
        }
        Ok(())
    }
}

/// Occupancy of the field on a `resolution³` grid over `bounds`: a cell is
/// occupied when its opacity `1 − exp(−σ(center) δ)`, with `δ` the cell edge,
/// exceeds `threshold`. Occupied cells without an occupied face neighbor are
/// dropped.
pub fn extract_occupancy<M: RadianceModel<Scalar> + ?Sized>(
    field: &M,
    bounds: Aabb<Scalar>,
    resolution: usize,
    threshold: Scalar,
    parts: usize,
    workers: &Workers,
) -> Result<PartVoxelSet> {
    if resolution == 0 {
        return Err(Error::invalid("voxel resolution must be positive"));
    }
    let edge = (bounds.max.x - bounds.min.x) / resolution as Scalar;
    extract_occupancy_with_delta(field, bounds, resolution, threshold, edge, parts, workers)
}

/// Occupancy with an explicit optical-depth step `delta` in place of the
/// cell edge.
pub fn extract_occupancy_with_delta<M: RadianceModel<Scalar> + ?Sized>(
    field: &M,
    bounds: Aabb<Scalar>,
    resolution: usize,
    threshold: Scalar,
    delta: Scalar,
    parts: usize,
    workers: &Workers,
) -> Result<PartVoxelSet> {
    if resolution == 0 {
        return Err(Error::invalid("voxel resolution must be positive"));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid("occupancy threshold must lie in (0, 1)"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("occupancy step must be positive"));
    }
    let mut set = PartVoxelSet {
        resolution,
        bounds,
        occupied: Vec::new(),
        labels: vec![UNASSIGNED; resolution.pow(3)],
        parts,
    };
    let r = resolution;
    let slabs = workers.map_indices(r, |k| {
        let mut out = vec![false; r * r];
        for j in 0..r {
            for i in 0..r {
                let c = set.center(set.index(i, j, k));
                let sigma = field.density(c);
                out[j * r + i] = -(-sigma * delta).exp_m1() > threshold;
            }
        }
        out
    });
    let raw: Vec<bool> = slabs.into_iter().flatten().collect();
    let occ = |i: isize, j: isize, k: isize| -> bool {
        let n = r as isize;
        i >= 0 && j >= 0 && k >= 0 && i < n && j < n && k < n && raw[((k * n + j) * n + i) as usize]
    };
    set.occupied = (0..raw.len())
        .map(|c| {
            if !raw[c] {
                return false;
            }
            let (i, j, k) = set.coords(c);
            let (i, j, k) = (i as isize, j as isize, k as isize);
            occ(i - 1, j, k) || occ(i + 1, j, k) || occ(i, j - 1, k) || occ(i, j + 1, k) || occ(i, j, k - 1) || occ(i, j, k + 1)
        })
        .collect();
    Ok(set)
}

/// A source-state foreground pixel that is background in a target view.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovedPixel {
    pub pixel: usize,
    /// Ray parameter of the rendered depth.
    pub depth: Scalar,
}

/// Source-state render of one target view.
#[derive(Clone, Debug)]
pub struct SourceView {
    /// Rendered opacity binarized at the threshold.
    pub foreground: Vec<bool>,
    pub moved: Vec<MovedPixel>,
}

/// Renders the frozen field from `cam` and keeps pixels that are opaque in
/// the render but background in `mask`, with their depths. Pixels within
/// `edge_margin` (Chebyshev) of a `mask` foreground pixel are skipped.
#[allow(clippy::too_many_arguments)]
pub fn detect_moved_pixels<M: RadianceModel<Scalar> + ?Sized>(
    field: &M,
    cam: &Camera<Scalar>,
    mask: &[u8],
    opacity_threshold: Scalar,
    edge_margin: usize,
    sampling: SamplingConfig,
    seed: u64,
    workers: &Workers,
) -> Result<SourceView> {
    if mask.len() != cam.width * cam.height {
        return Err(Error::invalid(format!(
            "mask has {} pixels, camera {}x{}",
            mask.len(),
            cam.width,
            cam.height
        )));
    }
    let img = render_image(field, cam, sampling, seed, workers)?;
    let foreground: Vec<bool> = img.pixels.iter().map(|p| p.opacity > opacity_threshold).collect();
    let (w, h) = (cam.width, cam.height);
    let near_silhouette = |p: usize| {
        let (x, y) = (p % w, p / w);
        let xs = x.saturating_sub(edge_margin)..=(x + edge_margin).min(w - 1);
        (y.saturating_sub(edge_margin)..=(y + edge_margin).min(h - 1)).any(|yy| xs.clone().any(|xx| mask[yy * w + xx] != 0))
    };
    let moved = (0..mask.len())
        .filter(|&p| foreground[p] && !near_silhouette(p))
        .map(|p| MovedPixel {
            pixel: p,
            depth: img.pixels[p].depth,
        })
        .collect();
    Ok(SourceView { foreground, moved })
}

/// Initialization settings shared with the distillation config.
#[derive(Clone, Copy, Debug)]
pub struct InitParams {
    pub parts: usize,
    pub dbscan_eps_cells: Scalar,
    pub dbscan_min_pts: usize,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InitSummary {
    pub moved_pixels: usize,
    pub dynamic_cells: usize,
    pub clusters: usize,
    pub part_cells: Vec<usize>,
}

/// Tags the occupied cells hit by back-projected moved pixels as dynamic,
/// splits them into `parts − 1` clusters when needed, and labels the rest of
/// the occupied cells static.
pub fn initialize_parts(
    voxels: &PartVoxelSet,
    target: &ObservationSet,
    views: &[SourceView],
    params: InitParams,
) -> Result<(PartVoxelSet, InitSummary)> {
    let k = params.parts;
    if k < 2 || k > MAX_PARTS {
        return Err(Error::invalid(format!("need 2..={MAX_PARTS} parts, got {k}")));
    }
    if views.len() != target.len() {
        return Err(Error::invalid("one source render per target view required"));
    }
    let moved_total: usize = views.iter().map(|v| v.moved.len()).sum();
    if moved_total == 0 {
        return Err(Error::NoMotionDetected);
    }
    let mut dynamic: Vec<bool> = vec![false; voxels.cell_count()];
    let r = voxels.resolution as isize;
    for (vi, view) in views.iter().enumerate() {
        let cam = target.camera(vi)?;
        for m in &view.moved {
            let Some(ray) = cam.pixel_center_ray(m.pixel % target.width, m.pixel / target.width, &voxels.bounds)? else {
                continue;
            };
            let x = ray.at(m.depth);
            let Some(c) = voxels.cell_of(x) else { continue };
            // occupied cells of the trilinear support around the point
            let h = voxels.spacing();
            let rel = (x - voxels.bounds.min) * (1.0 / h);
            let base = [(rel.x - 0.5).floor() as isize, (rel.y - 0.5).floor() as isize, (rel.z - 0.5).floor() as isize];
            let mut hit = false;
            for corner in 0..8 {
                let (a, b, cc) = (base[0] + (corner & 1), base[1] + ((corner >> 1) & 1), base[2] + ((corner >> 2) & 1));
                if a < 0 || b < 0 || cc < 0 || a >= r || b >= r || cc >= r {
                    continue;
                }
                let n = voxels.index(a as usize, b as usize, cc as usize);
                if voxels.occupied[n] {
                    dynamic[n] = true;
                    hit = true;
                }
            }
            if hit {
                continue;
            }
            // the depth landed between surfaces: take the nearest occupied neighbor
            let (i, j, kk) = voxels.coords(c);
            let mut best: Option<(Scalar, usize)> = None;
            for dz in -1..=1isize {
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        let (a, b, cc) = (i as isize + dx, j as isize + dy, kk as isize + dz);
                        if a < 0 || b < 0 || cc < 0 || a >= r || b >= r || cc >= r {
                            continue;
                        }
                        let n = voxels.index(a as usize, b as usize, cc as usize);
                        if !voxels.occupied[n] {
                            continue;
                        }
                        let d = (voxels.center(n) - x).norm_squared();
                        if best.map_or(true, |(bd, bn)| d < bd || (d == bd && n < bn)) {
                            best = Some((d, n));
                        }
                    }
                }
            }
            if let Some((_, n)) = best {
                dynamic[n] = true;
            }
        }
    }
    let dyn_cells: Vec<usize> = (0..dynamic.len()).filter(|&c| dynamic[c]).collect();
    if dyn_cells.is_empty() {
        return Err(Error::Initialization("moved pixels back-project into no occupied cell; the motion may be too small".into()));
    }
    let mut out = voxels.clone();
    out.parts = k;
    for c in 0..out.cell_count() {
        out.labels[c] = if out.occupied[c] { 0 } else { UNASSIGNED };
    }
    let mut clusters = 1;
    if k == 2 {
        for &c in &dyn_cells {
            out.labels[c] = 1;
        }
    } else {
        let pts: Vec<Vec3<Scalar>> = dyn_cells.iter().map(|&c| voxels.center(c)).collect();
        let eps = params.dbscan_eps_cells * voxels.spacing();
        let ids = dbscan(&pts, eps, params.dbscan_min_pts);
        let n_clusters = ids.iter().flatten().max().map_or(0, |m| m + 1);
        clusters = n_clusters;
        let mut sizes: Vec<(usize, usize)> = (0..n_clusters).map(|c| (ids.iter().filter(|i| **i == Some(c)).count(), c)).collect();
        // largest first; equal sizes keep discovery order
        sizes.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        if n_clusters < k - 1 {
            return Err(Error::Initialization(format!(
                "found {n_clusters} moving clusters, expected {}; the motion may be too small",
                k - 1
            )));
        }
        for (rank, &(_, cid)) in sizes.iter().take(k - 1).enumerate() {
            for (p, id) in ids.iter().enumerate() {
                if *id == Some(cid) {
                    out.labels[dyn_cells[p]] = rank as u8 + 1;
                }
            }
        }
    }
    let counts = out.part_counts();
    if let Some(l) = (1..k).find(|&l| counts[l] == 0) {
        return Err(Error::Initialization(format!("moving part {l} has no cells; the motion may be too small")));
    }
    let summary = InitSummary {
        moved_pixels: moved_total,
        dynamic_cells: dyn_cells.len(),
        clusters,
        part_cells: counts,
    };
    Ok((out, summary))
}

/// Argmax part of `head` at the latent of `x`; lowest index wins ties.
pub fn predict_label(field: &RadianceField<Scalar>, head: &SegmentationHead<Scalar>, x: Vec3<Scalar>) -> u8 {
    let mut z = [0.0; MAX_FEATURES];
    field.query(x, &mut z);
    let mut p = [0.0; MAX_PARTS];
    head.probabilities(&z, &mut p);
    let mut best = 0;
    for l in 1..head.parts() {
        if p[l] > p[best] {
            best = l;
        }
    }
    best as u8
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RefineSummary {
    pub resolution: usize,
    pub part_cells: Vec<usize>,
    /// Moving parts that lost every cell and kept their previous set.
    pub kept_previous: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefineParams {
    pub resolution: usize,
    pub occupancy_threshold: Scalar,
    /// Optical-depth step of the occupancy test.
    pub occupancy_delta: Scalar,
    /// Per-axis reach of the consistency check.
    pub tolerance: Scalar,
}

/// Relabels the occupancy at the new resolution from the head's argmax. A
/// moving cell is accepted only if a previous cell of the same part lies
/// within `tolerance` (per axis) of it; rejected cells stay unassigned.
/// Static cells are accepted as predicted.
pub fn refine_voxels(
    field: &RadianceField<Scalar>,
    head: &SegmentationHead<Scalar>,
    previous: &PartVoxelSet,
    params: RefineParams,
    workers: &Workers,
) -> Result<(PartVoxelSet, RefineSummary)> {
    let k = previous.parts;
    let RefineParams {
        resolution,
        occupancy_threshold,
        occupancy_delta,
        tolerance,
    } = params;
    let mut next = extract_occupancy_with_delta(field, previous.bounds, resolution, occupancy_threshold, occupancy_delta, k, workers)?;
    let prev_sets: Vec<HashSet<usize>> = (0..k).map(|l| previous.cells_of(l as u8).into_iter().collect()).collect();
    let hp = previous.spacing();
    let reach = (tolerance / hp).ceil() as isize;
    let rp = previous.resolution as isize;
    let near_previous = |x: Vec3<Scalar>, l: usize| -> bool {
        let rel = (x - previous.bounds.min) * (1.0 / hp);
        let (ci, cj, ck) = (rel.x.floor() as isize, rel.y.floor() as isize, rel.z.floor() as isize);
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (a, b, c) = (ci + dx, cj + dy, ck + dz);
                    if a < 0 || b < 0 || c < 0 || a >= rp || b >= rp || c >= rp {
                        continue;
                    }
                    let n = previous.index(a as usize, b as usize, c as usize);
                    if !prev_sets[l].contains(&n) {
                        continue;
                    }
                    let d = previous.center(n) - x;
                    if d.x.abs() <= tolerance && d.y.abs() <= tolerance && d.z.abs() <= tolerance {
                        return true;
                    }
                }
            }
        }
        false
    };
    let occupied: Vec<usize> = (0..next.cell_count()).filter(|&c| next.occupied[c]).collect();
    let labels: Vec<u8> = workers.map_indices(occupied.len(), |i| {
        let c = occupied[i];
        let x = next.center(c);
        let l = predict_label(field, head, x);
        if l == 0 || near_previous(x, l as usize) {
            l
        } else {
            UNASSIGNED
        }
    });
    for (c, l) in occupied.iter().zip(labels) {
        next.labels[*c] = l;
    }
    let mut summary = RefineSummary {
        resolution,
        ..Default::default()
    };
    let counts = next.part_counts();
    for l in 1..k {
        if counts[l] == 0 {
            // keep the previous cells, mapped onto the new grid where occupied
            for &c in &occupied {
                if previous.cell_of(next.center(c)).is_some_and(|p| prev_sets[l].contains(&p)) {
                    next.labels[c] = l as u8;
                }
            }
            summary.kept_previous.push(l);
        }
    }
    summary.part_cells = next.part_counts();
    for &l in &summary.kept_previous {
        if summary.part_cells[l] == 0 {
            // nothing maps onto an occupied cell: retain the old grid outright
            return Ok((previous.clone(), RefineSummary {
                resolution: previous.resolution,
                part_cells: previous.part_counts(),
                kept_previous: summary.kept_previous.clone(),
            }));
        }
    }
    Ok((next, summary))
}
