//! Image and segmentation metrics, and the end-to-end evaluation report.

use serde::{Deserialize, Serialize};

use crate::dataio::ObservationSet;
use crate::field::{PartModel, RadianceModel};
use crate::geom::{
    axis_direction_error, axis_position_error, decompose_as, decompose_motion, geodesic_rotation_error, translation_error, JointEstimate, JointType, Transform,
    DEFAULT_ANGLE_THRESHOLD_DEG,
};
use crate::parallel::{mix_seed, Workers};
use crate::render::{render_image_composite, PartMotions, SamplingConfig};
use crate::{Error, Result};

/// Upper bound reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10·log10(1/MSE)` over all channels of images in [0, 1].
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!("psnr needs equal non-empty inputs ({} vs {})", a.len(), b.len())));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(mse_to_psnr(mse))
}

pub fn mse_to_psnr(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// Per-part intersection and union pixel counts; label 0 is background,
/// `ℓ + 1` is part `ℓ`.
pub fn iou_counts(pred: &[u8], gt: &[u8], k: usize) -> Result<Vec<(u64, u64)>> {
    if pred.len() != gt.len() {
        return Err(Error::invalid("label images differ in size"));
    }
    let mut c = vec![(0u64, 0u64); k];
    for (&p, &g) in pred.iter().zip(gt) {
        for (l, (inter, union)) in c.iter_mut().enumerate() {
            let id = l as u8 + 1;
            let (a, b) = (p == id, g == id);
            *inter += u64::from(a && b);
            *union += u64::from(a || b);
        }
    }
    Ok(c)
}

/// Mean IoU over parts present in either image.
pub fn miou_from_counts(c: &[(u64, u64)]) -> f64 {
    let present: Vec<f64> = c.iter().filter(|(_, u)| *u > 0).map(|(i, u)| *i as f64 / *u as f64).collect();
    if present.is_empty() {
        return 1.0;
    }
    present.iter().sum::<f64>() / present.len() as f64
}

pub fn miou(pred: &[u8], gt: &[u8], k: usize) -> Result<f64> {
    Ok(miou_from_counts(&iou_counts(pred, gt, k)?))
}

/// Pose errors of one matched joint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointErrors {
    pub part: usize,
    pub gt_joint: usize,
    pub e_d: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_t: Option<f64>,
    /// `None` when the learned motion is too small to decompose.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<JointEstimate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub view: usize,
    pub psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub joints: Vec<JointErrors>,
    pub psnr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miou: Option<f64>,
    pub views: Vec<ViewMetrics>,
    pub workers: usize,
}

impl EvalReport {
    /// Plain-text table with one row per joint.
    pub fn table(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        let mut s = String::from("joint  part  e_d(deg)  e_p       e_g(deg)  e_t\n");
        for j in &self.joints {
            s += &format!(
                "{:<6} {:<5} {:<9.4} {:<9} {:<9} {}\n",
                j.gt_joint + 1,
                j.part,
                j.e_d,
                f(j.e_p),
                f(j.e_g),
                f(j.e_t)
            );
        }
        s += &format!("PSNR {:.2} dB", self.psnr);
        if let Some(m) = self.miou {
            s += &format!("   mIoU {m:.4}");
        }
        s.push('\n');
        s
    }
}

/// Axis error charged to a part whose motion cannot be decomposed.
pub const UNDECOMPOSABLE_AXIS_ERROR_DEG: f64 = 90.0;

/// Errors of a learned motion against one ground-truth joint.
pub fn joint_errors(part: usize, motion: &Transform<f64>, gt_joint: usize, gt: &JointEstimate) -> Result<JointErrors> {
    let gt_m = gt.to_transform()?;
    let estimate = match decompose_motion(motion, DEFAULT_ANGLE_THRESHOLD_DEG) {
        Ok(e) if e.joint_type == gt.joint_type => Some(e),
        Ok(e) => Some(decompose_as(motion, gt.joint_type).unwrap_or(e)),
        Err(_) => decompose_as(motion, gt.joint_type).ok(),
    };
    let e_d = estimate.as_ref().map_or(UNDECOMPOSABLE_AXIS_ERROR_DEG, |e| axis_direction_error(e, gt));
    let (e_p, e_g, e_t) = match gt.joint_type {
        JointType::Revolute => (
            estimate.as_ref().and_then(|e| axis_position_error(e, gt).ok()),
            Some(geodesic_rotation_error(motion, &gt_m)),
            None,
        ),
        JointType::Prismatic => (None, None, Some(translation_error(motion, &gt_m))),
    };
    Ok(JointErrors {
        part,
        gt_joint,
        e_d,
        e_p,
        e_g,
        e_t,
        estimate,
    })
}

/// Axis error, with the other errors breaking ties between parallel axes.
pub fn matching_cost(e: &JointErrors) -> f64 {
    e.e_d + MATCH_TIE_WEIGHT * (e.e_p.unwrap_or(0.0) + e.e_g.unwrap_or(0.0) + e.e_t.unwrap_or(0.0))
}

const MATCH_TIE_WEIGHT: f64 = 1e-6;

/// Assignment of rows to columns minimizing the summed cost, by exhaustive
/// search. Pairs are `(row, column)` sorted by row; `min(rows, cols)` pairs.
pub fn match_min_cost(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let at = |i: usize, j: usize| if transpose { cost[j][i] } else { cost[i][j] };
    fn search(i: usize, n: usize, m: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, acc: f64, best: &mut (f64, Vec<usize>), at: &dyn Fn(usize, usize) -> f64) {
        if acc >= best.0 {
            return;
        }
        if i == n {
            *best = (acc, cur.clone());
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                cur.push(j);
                search(i + 1, n, m, used, cur, acc + at(i, j), best, at);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    search(0, n, m, &mut vec![false; m], &mut Vec::new(), 0.0, &mut best, &at);
    let mut pairs: Vec<(usize, usize)> = best.1.into_iter().enumerate().map(|(i, j)| if transpose { (j, i) } else { (i, j) }).collect();
    pairs.sort_unstable();
    pairs
}

/// Renders every target view through the part model and scores it; with
/// `gt_joints`, learned motions are matched to joints by axis error.
/// `motions[0]` is the static part.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<M: RadianceModel<f64> + ?Sized, S: PartModel<f64> + ?Sized>(
    model: &M,
    seg: &S,
    motions: &[Transform<f64>],
    target: &ObservationSet,
    gt_joints: Option<&[JointEstimate]>,
    sampling: SamplingConfig,
    seed: u64,
    workers: &Workers,
) -> Result<EvalReport> {
    target.validate()?;
    let k = seg.parts();
    if motions.len() != k {
        return Err(Error::invalid(format!("{} motions for {k} parts", motions.len())));
    }
    let part_motions = PartMotions::new(motions.to_vec())?;
    let mut joints = Vec::new();
    if let Some(gt) = gt_joints {
        let mut table = Vec::with_capacity(k.saturating_sub(1));
        for (l, m) in motions.iter().enumerate().skip(1) {
            table.push(gt.iter().enumerate().map(|(j, g)| joint_errors(l, m, j, g)).collect::<Result<Vec<_>>>()?);
        }
        let cost: Vec<Vec<f64>> = table.iter().map(|row| row.iter().map(matching_cost).collect()).collect();
        for (r, c) in match_min_cost(&cost) {
            joints.push(table[r][c].clone());
        }
        joints.sort_by_key(|j| j.gt_joint);
    }
    let pixels = target.width * target.height;
    let mut views = Vec::with_capacity(target.len());
    let mut sq = 0.0;
    let mut counts = vec![(0u64, 0u64); k];
    let mut have_labels = gt_joints.is_some();
    for v in 0..target.len() {
        let img = render_image_composite(model, seg, &part_motions, &target.camera(v)?, sampling, mix_seed(seed, v as u64), workers)?;
        let rgb: Vec<f64> = img.rgb().into_iter().flatten().collect();
        let want: Vec<f64> = (0..pixels).flat_map(|p| target.color(v, p)).collect();
        let view_sq: f64 = rgb.iter().zip(&want).map(|(a, b)| (a - b) * (a - b)).sum();
        sq += view_sq;
        let miou_v = match (&target.views[v].labels, have_labels) {
            (Some(gt_labels), true) => {
                let c = iou_counts(&img.labels(), gt_labels, k)?;
                for (acc, x) in counts.iter_mut().zip(&c) {
                    acc.0 += x.0;
                    acc.1 += x.1;
                }
                Some(miou_from_counts(&c))
            }
            _ => {
                have_labels = false;
                None
            }
        };
        views.push(ViewMetrics {
            view: v,
            psnr: mse_to_psnr(view_sq / (3 * pixels) as f64),
            miou: miou_v,
        });
    }
    Ok(EvalReport {
        joints,
        psnr: mse_to_psnr(sq / (3 * pixels * target.len()) as f64),
        miou: have_labels.then(|| miou_from_counts(&counts)),
        views,
        workers: workers.count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn psnr_examples() {
        let a = vec![0.25; 12];
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &b[..3]).is_err());
    }

    #[test]
    fn psnr_matches_pixel_accumulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..3 * 100).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..3 * 100).map(|_| rng.gen()).collect();
        let mut acc = 0.0;
        for p in 0..100 {
            for c in 0..3 {
                let d = a[3 * p + c] - b[3 * p + c];
                acc += d * d;
            }
        }
        let oracle = -10.0 * (acc / 300.0).log10();
        assert!((psnr(&a, &b).unwrap() - oracle).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn miou_examples() {
        let gt = vec![0, 1, 1, 2, 2, 0];
        assert_eq!(miou(&gt, &gt, 2).unwrap(), 1.0);
        let gt = vec![1, 1, 1, 1];
        let pred = vec![1, 1, 0, 0];
        assert_eq!(miou(&pred, &gt, 1).unwrap(), 0.5);
        // part 2 absent on both sides is skipped
        assert_eq!(miou(&pred, &gt, 3).unwrap(), 0.5);
    }

    #[test]
    fn miou_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let k = rng.gen_range(1..5);
            let pred: Vec<u8> = (0..200).map(|_| rng.gen_range(0..=k as u8)).collect();
            let gt: Vec<u8> = (0..200).map(|_| rng.gen_range(0..=k as u8)).collect();
            let mut ious = Vec::new();
            for l in 1..=k as u8 {
                let inter = pred.iter().zip(&gt).filter(|(p, g)| **p == l && **g == l).count();
                let union = pred.iter().zip(&gt).filter(|(p, g)| **p == l || **g == l).count();
                if union > 0 {
                    ious.push(inter as f64 / union as f64);
                }
            }
            let oracle = ious.iter().sum::<f64>() / ious.len() as f64;
            assert_eq!(miou(&pred, &gt, k).unwrap(), oracle);
            assert_eq!(miou(&pred, &gt, k).unwrap(), miou(&gt, &pred, k).unwrap());
        }
    }

    #[test]
    fn matching_agrees_with_permutation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (rows, cols) in [(1, 1), (2, 2), (3, 3), (2, 3), (3, 2), (1, 3)] {
            for _ in 0..20 {
                let cost: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(0.0..10.0)).collect()).collect();
                let pairs = match_min_cost(&cost);
                assert_eq!(pairs.len(), rows.min(cols));
                let total: f64 = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
                // every injective assignment of the shorter side
                let mut best = f64::INFINITY;
                let n = rows.min(cols);
                let m = rows.max(cols);
                let mut idx: Vec<usize> = (0..m).collect();
                permute(&mut idx, 0, &mut |p| {
                    let s: f64 = (0..n).map(|i| if rows <= cols { cost[i][p[i]] } else { cost[p[i]][i] }).sum();
                    best = best.min(s);
                });
                assert!((total - best).abs() < 1e-12, "{total} vs {best}");
            }
        }
    }

    fn permute(v: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
        if i == v.len() {
            f(v);
            return;
        }
        for j in i..v.len() {
            v.swap(i, j);
            permute(v, i + 1, f);
            v.swap(i, j);
        }
    }

    #[test]
    fn scrambled_joints_are_rematched() {
        let spec = crate::scenegen::SceneSpec::two_door_cabinet();
        let gt = &spec.joints;
        let mut motions = spec.motions().unwrap();
        motions.swap(1, 2);
        let table: Vec<Vec<f64>> = motions[1..]
            .iter()
            .enumerate()
            .map(|(l, m)| gt.iter().enumerate().map(|(j, g)| matching_cost(&joint_errors(l + 1, m, j, g).unwrap())).collect())
            .collect();
        assert_eq!(match_min_cost(&table), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn ground_truth_fixed_point_has_zero_pose_error() {
        use crate::dataio::State;
        use crate::scenegen::{generate, AnalyticScene, OracleParts, SceneSpec};
        let w = Workers::new(1).unwrap();
        let spec = SceneSpec::hinged_box();
        let data = generate(&spec, 3, 48, 4, &w).unwrap();
        let src = AnalyticScene::new(&spec, State::Source).unwrap();
        let seg = OracleParts { parts: 2 };
        let motions = spec.motions().unwrap();
        let r = evaluate(&src, &seg, &motions, &data.target, Some(&spec.joints), SamplingConfig::default(), 0, &w).unwrap();
        assert_eq!(r.joints.len(), 1);
        let j = &r.joints[0];
        assert!(j.e_d < 1e-6 && j.e_p.unwrap() < 1e-6 && j.e_g.unwrap() < 1e-6, "{j:?}");
        assert!(r.miou.unwrap() > 0.99, "miou {:?}", r.miou);
        assert!(r.psnr > 30.0, "psnr {}", r.psnr);
        assert_eq!(r.views.len(), 3);

        let plain = evaluate(&src, &seg, &motions, &data.target, None, SamplingConfig::default(), 0, &w).unwrap();
        assert!(plain.joints.is_empty() && plain.miou.is_none());
        assert_eq!(plain.psnr, r.psnr);
    }

    #[test]
    fn prismatic_metrics() {
        let spec = crate::scenegen::SceneSpec::drawer();
        let m = spec.motions().unwrap();
        let e = joint_errors(1, &m[1], 0, &spec.joints[0]).unwrap();
        assert!(e.e_d < 1e-9 && e.e_t.unwrap() < 1e-12 && e.e_p.is_none() && e.e_g.is_none());
        let still = joint_errors(1, &Transform::identity(), 0, &spec.joints[0]).unwrap();
        assert_eq!(still.e_d, UNDECOMPOSABLE_AXIS_ERROR_DEG);
        assert!(still.estimate.is_none());
    }
}
