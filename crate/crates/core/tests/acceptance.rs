//! Acceptance suite: one PASS/FAIL/NOTE line per criterion.
//!
//! The end-to-end criteria fit and distill real scenes and take tens of
//! minutes on a single core. Set `ACCEPTANCE_STRICT=1` to turn any FAIL into
//! a nonzero exit status, and `ACCEPTANCE_QUICK=1` to stop after the oracle
//! criteria 1–4.

use std::time::Instant;

use partdistill::dataio::Checkpoint;
use partdistill::distill::{chamfer_2d, distill, Chamfer, DistillConfig, DistillOutput, Point2};
use partdistill::field::{FieldShape, GradientBuffer, RadianceField, RadianceModel, SegmentationHead, WholeObject};
use partdistill::geom::{Aabb, Ray, Twist, Vec3};
use partdistill::metrics::{evaluate, EvalReport};
use partdistill::parallel::Workers;
use partdistill::render::{
    backward_ray, backward_ray_composite, photometric_loss, photometric_loss_grad, render_ray, render_ray_composite, render_ray_traced, sample_ray, CompositeTrace,
    PartMotions, RayTrace, SampleSet, SamplingConfig,
};
use partdistill::scenegen::{generate, Dataset, SceneSpec};
use partdistill::staticfit::{fit_static, FitConfig, FitReport};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Verdict {
    Pass,
    Fail,
    /// Recorded, not asserted.
    Note,
}

struct Line {
    id: &'static str,
    verdict: Verdict,
    detail: String,
    secs: f64,
}

impl Line {
    fn print(&self) {
        let tag = match self.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Note => "NOTE",
        };
        println!("[{tag}] {:<4} {} ({:.1} s)", self.id, self.detail, self.secs);
    }
}

fn verdict(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn random_field(seed: u64, shape: FieldShape) -> RadianceField<f64> {
    let mut f = RadianceField::new(Aabb::new(Vec3::splat(-1.0), Vec3::splat(1.0)).unwrap(), shape, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    let v = f.grid().vertex_count();
    for (i, p) in f.params_mut().iter_mut().enumerate() {
        *p += if i < v { rng.gen_range(-1.0..2.0) } else { rng.gen_range(-0.5..0.5) };
    }
    f
}

/// Vertex values from a few random plane waves, so trilinear slopes change
/// little across cell faces and central differences stay accurate.
fn smooth_field(seed: u64, shape: FieldShape) -> RadianceField<f64> {
    let mut f = random_field(seed, shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 91);
    let v = f.grid().vertex_count();
    let fd = shape.feature_dim;
    let r = f.grid().resolution;
    let waves: Vec<(Vec3<f64>, f64)> = (0..1 + fd)
        .map(|_| (Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)), rng.gen_range(0.0..6.0)))
        .collect();
    let pos: Vec<Vec3<f64>> = (0..v).map(|i| f.grid().vertex_position(i % r[0], (i / r[0]) % r[1], i / (r[0] * r[1]))).collect();
    let params = f.params_mut();
    for (i, p) in pos.iter().enumerate() {
        params[i] = 0.5 + (waves[0].0.dot(*p) + waves[0].1).sin();
        for c in 0..fd {
            let (k, ph) = waves[1 + c];
            params[v + i * fd + c] = 0.5 * (k.dot(*p) + ph).sin();
        }
    }
    f
}

fn random_ray(rng: &mut ChaCha8Rng, half: f64) -> Ray<f64> {
    let o = Vec3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), 3.0);
    let target = Vec3::new(rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), 0.0);
    let d = (target - o).normalized();
    let inner = Aabb::new(Vec3::splat(-half), Vec3::splat(half)).unwrap();
    Ray::new(o, d, 0.0, f64::INFINITY).unwrap().clip(&inner).unwrap()
}

fn reduction_identity() -> Line {
    let t = Instant::now();
    let shape = FieldShape { resolution: 12, feature_dim: 6, color_hidden: 16 };
    let field = random_field(5, shape);
    let heads = [SegmentationHead::new(6, 16, 2, 9), SegmentationHead::new(6, 16, 4, 10)];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let r = random_ray(&mut rng, 1.0);
        let s = sample_ray(&field, &r, SamplingConfig::default(), &mut rng);
        let plain = render_ray(&field, &r, &s);
        let head = &heads[i % 2];
        let k = if i % 2 == 0 { 2 } else { 4 };
        let outs = [
            render_ray_composite(&field, &WholeObject, &PartMotions::identity(1), &r, &s, None).unwrap(),
            render_ray_composite(&field, head, &PartMotions::identity(k), &r, &s, None).unwrap(),
        ];
        for out in outs {
            for c in 0..3 {
                worst = worst.max((out.color[c] - plain.color[c]).abs());
            }
            worst = worst.max((out.opacity - plain.opacity).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Line {
        id: "1",
        verdict: verdict(worst <= 1e-6 && secs < 10.0),
        detail: format!("reduction identity: max |composite − plain| = {worst:.2e} over 1000 rays (≤ 1e-6, < 10 s)"),
        secs,
    }
}

const BG: [f64; 3] = [0.2, 0.5, 0.8];

type Batch = Vec<(Ray<f64>, SampleSet<f64>, [f64; 3])>;

fn make_batch(field: &RadianceField<f64>, n: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = random_ray(&mut rng, 0.5);
            let s = sample_ray(field, &r, SamplingConfig { n_coarse: 32, n_fine: 16 }, &mut rng);
            (r, s, [rng.gen(), rng.gen(), rng.gen()])
        })
        .collect()
}

fn plain_loss(field: &RadianceField<f64>, batch: &Batch) -> f64 {
    let rendered: Vec<[f64; 3]> = batch
        .iter()
        .map(|(r, s, _)| {
            let out = render_ray(field, r, s);
            [0, 1, 2].map(|c| out.color[c] + (1.0 - out.opacity) * BG[c])
        })
        .collect();
    let target: Vec<[f64; 3]> = batch.iter().map(|b| b.2).collect();
    photometric_loss(&rendered, &target)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Picks `n` indices from `pool` whose analytic gradient is not negligible.
fn pick(grad: &[f64], pool: std::ops::Range<usize>, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let scale = pool.clone().map(|i| grad[i].abs()).fold(0.0, f64::max);
    let mut live: Vec<usize> = pool.filter(|&i| grad[i].abs() > 1e-4 * scale).collect();
    live.shuffle(rng);
    live.truncate(n);
    live
}

struct CompositeCase {
    field: RadianceField<f64>,
    head: SegmentationHead<f64>,
    twists: Vec<Twist<f64>>,
    batch: Batch,
}

impl CompositeCase {
    fn new(seed: u64) -> Self {
        let shape = FieldShape { resolution: 10, feature_dim: 4, color_hidden: 8 };
        let field = smooth_field(seed, shape);
        let head = SegmentationHead::new(4, 16, 3, seed + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 3);
        let mut tw = || Twist::new(Vec3::new(rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)), Vec3::new(rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06), rng.gen_range(-0.06..0.06)));
        let twists = vec![Twist::zero(), tw(), tw()];
        let batch = make_batch(&field, 4, seed + 2);
        Self { field, head, twists, batch }
    }

    fn motions(twists: &[Twist<f64>]) -> PartMotions<f64> {
        PartMotions::new(twists.iter().map(|t| t.exp()).collect()).unwrap()
    }

    fn loss(&self, head: &SegmentationHead<f64>, twists: &[Twist<f64>]) -> f64 {
        let m = Self::motions(twists);
        let rendered: Vec<[f64; 3]> = self.batch.iter().map(|(r, s, _)| render_ray_composite(&self.field, head, &m, r, s, None).unwrap().color).collect();
        let target: Vec<[f64; 3]> = self.batch.iter().map(|b| b.2).collect();
        photometric_loss(&rendered, &target)
    }

    fn grads(&self) -> GradientBuffer<f64> {
        let m = Self::motions(&self.twists);
        let mut g = GradientBuffer::new(0, self.head.params().len(), 3);
        let mut trace = CompositeTrace::default();
        for (r, s, target) in &self.batch {
            let out = render_ray_composite(&self.field, &self.head, &m, r, s, Some(&mut trace)).unwrap();
            let d = photometric_loss_grad(out.color, *target, self.batch.len());
            backward_ray_composite(&self.field, &self.head, s, &trace, d, &mut g);
        }
        g
    }
}

fn gradient_suite() -> Line {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // field density, features and color head through the plain renderer
    let shape = FieldShape { resolution: 10, feature_dim: 4, color_hidden: 16 };
    let field = smooth_field(8, shape);
    let batch = make_batch(&field, 8, 21);
    let mut grad = vec![0.0; field.param_count()];
    let mut trace = RayTrace::default();
    for (r, s, target) in &batch {
        let out = render_ray_traced(&field, r, s, &mut trace);
        let shown = [0, 1, 2].map(|c| out.color[c] + (1.0 - out.opacity) * BG[c]);
        let g = photometric_loss_grad(shown, *target, batch.len());
        let d_opacity = -(0..3).map(|c| g[c] * BG[c]).sum::<f64>();
        backward_ray(&field, r, s, &trace, g, d_opacity, &mut grad);
    }
    let v = field.grid().vertex_count();
    let grid_end = field.grid_param_count();
    let groups = [("density", pick(&grad, 0..v, 100, &mut rng)), ("feature", pick(&grad, v..grid_end, 100, &mut rng)), ("color head", pick(&grad, grid_end..grad.len(), 100, &mut rng))];
    let mut parts = Vec::new();
    let mut ok = true;
    for (name, idx) in &groups {
        let mut worst = 0.0f64;
        for &i in idx {
            let eps = 1e-5;
            let mut fp = field.clone();
            fp.params_mut()[i] += eps;
            let mut fm = field.clone();
            fm.params_mut()[i] -= eps;
            let fd = (plain_loss(&fp, &batch) - plain_loss(&fm, &batch)) / (2.0 * eps);
            worst = worst.max(rel_err(grad[i], fd));
        }
        ok &= worst < 1e-3 && idx.len() >= 50;
        parts.push(format!("{name} {worst:.1e} (n={})", idx.len()));
    }

    // segmentation head
    let case = CompositeCase::new(30);
    let g = case.grads();
    let idx = pick(&g.head, 0..g.head.len(), 100, &mut rng);
    let mut worst = 0.0f64;
    for &i in &idx {
        let eps = 1e-5;
        let mut hp = case.head.clone();
        hp.params_mut()[i] += eps;
        let mut hm = case.head.clone();
        hm.params_mut()[i] -= eps;
        let fd = (case.loss(&hp, &case.twists) - case.loss(&hm, &case.twists)) / (2.0 * eps);
        worst = worst.max(rel_err(g.head[i], fd));
    }
    ok &= worst < 1e-3;
    parts.push(format!("seg head {worst:.1e} (n={})", idx.len()));

    // twists: coordinate error relative to the part's gradient norm, 9 cases × 2 parts × 6
    let mut worst = 0.0f64;
    let mut n = 0;
    for seed in 0..9u64 {
        let case = CompositeCase::new(100 + 7 * seed);
        let g = case.grads();
        for part in 1..3 {
            let analytic = case.twists[part].pull_back_inverse(g.motion[part].to_array());
            let mut fd = [0.0; 6];
            for (c, out) in fd.iter_mut().enumerate() {
                let eps = 1e-5;
                let mut tp = case.twists.clone();
                let mut a = tp[part].to_array();
                a[c] += eps;
                tp[part] = Twist::from_array(a);
                let mut tm = case.twists.clone();
                let mut a = tm[part].to_array();
                a[c] -= eps;
                tm[part] = Twist::from_array(a);
                *out = (case.loss(&case.head, &tp) - case.loss(&case.head, &tm)) / (2.0 * eps);
            }
            let norm = fd.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            for c in 0..6 {
                worst = worst.max((analytic[c] - fd[c]).abs() / norm);
                n += 1;
            }
        }
    }
    ok &= worst < 5e-3;
    parts.push(format!("twist {worst:.1e} (n={n})"));
    let secs = t.elapsed().as_secs_f64();
    Line {
        id: "2",
        verdict: verdict(ok && secs < 120.0),
        detail: format!("gradient suite, worst relative error: {} (< 1e-3, twists < 5e-3)", parts.join(", ")),
        secs,
    }
}

fn brute_chamfer(u: &[Point2], f: &[Point2]) -> Chamfer {
    let nn = |q: Point2, set: &[Point2]| {
        let mut best = (f64::INFINITY, 0);
        for (j, p) in set.iter().enumerate() {
            let dx = q[0] - p[0];
            let dy = q[1] - p[1];
            let d = dx * dx + dy * dy;
            if d < best.0 {
                best = (d, j);
            }
        }
        best
    };
    let (nu, nf) = (u.len() as f64, f.len() as f64);
    let mut grad = vec![[0.0; 2]; u.len()];
    let mut a = 0.0;
    for (i, p) in u.iter().enumerate() {
        let (d, j) = nn(*p, f);
        a += d;
        grad[i][0] += 2.0 * (p[0] - f[j][0]) / nu;
        grad[i][1] += 2.0 * (p[1] - f[j][1]) / nu;
    }
    let mut b = 0.0;
    for q in f {
        let (d, i) = nn(*q, u);
        b += d;
        grad[i][0] += 2.0 * (u[i][0] - q[0]) / nf;
        grad[i][1] += 2.0 * (u[i][1] - q[1]) / nf;
    }
    Chamfer { loss: a / nu + b / nf, grad }
}

fn chamfer_oracle() -> Line {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut mismatches = 0;
    for case in 0..50 {
        let (nu, nf) = if case < 5 { (500, 500) } else { (rng.gen_range(1..=500), rng.gen_range(1..=500)) };
        // mix of image-like integer grids (many ties) and continuous clouds
        let integer = case % 2 == 0;
        let pt = |rng: &mut ChaCha8Rng| -> Point2 {
            if integer {
                [rng.gen_range(0..64) as f64 + 0.5, rng.gen_range(0..64) as f64 + 0.5]
            } else {
                [rng.gen_range(-40.0..40.0), rng.gen_range(-40.0..40.0)]
            }
        };
        let u: Vec<Point2> = (0..nu).map(|_| pt(&mut rng)).collect();
        let f: Vec<Point2> = (0..nf).map(|_| pt(&mut rng)).collect();
        let fast = chamfer_2d(&u, &f).unwrap();
        let slow = brute_chamfer(&u, &f);
        let same = fast.loss.to_bits() == slow.loss.to_bits() && fast.grad.iter().zip(&slow.grad).all(|(a, b)| a[0].to_bits() == b[0].to_bits() && a[1].to_bits() == b[1].to_bits());
        if !same {
            mismatches += 1;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Line {
        id: "3",
        verdict: verdict(mismatches == 0 && secs < 30.0),
        detail: format!("chamfer oracle: {mismatches}/50 instances differ bitwise from brute force (up to 500×500 points)"),
        secs,
    }
}

/// σ = 1 everywhere inside a unit-thickness slab across the ray.
struct Slab {
    bounds: Aabb<f64>,
}

impl RadianceModel<f64> for Slab {
    fn feature_dim(&self) -> usize {
        1
    }
    fn bounds(&self) -> &Aabb<f64> {
        &self.bounds
    }
    fn query(&self, x: Vec3<f64>, z: &mut [f64]) -> f64 {
        z[0] = 1.0;
        if (0.0..1.0).contains(&x.z) {
            1.0
        } else {
            0.0
        }
    }
    fn color(&self, _z: &[f64], _d: Vec3<f64>) -> [f64; 3] {
        [1.0; 3]
    }
}

fn homogeneous_slab() -> Line {
    let t = Instant::now();
    let m = Slab { bounds: Aabb::unit_cube() };
    let r = Ray::new(Vec3::zero(), Vec3::new(0.0, 0.0, 1.0), 0.0, 1.0).unwrap();
    let out = render_ray(&m, &r, &SampleSet::uniform(&r, 4096));
    let expect = 1.0 - (-1.0f64).exp();
    let err = (out.opacity - expect).abs();
    let secs = t.elapsed().as_secs_f64();
    Line {
        id: "4",
        verdict: verdict(err < 1e-3 && secs < 1.0),
        detail: format!("homogeneous slab: opacity {:.6} vs 1 − e⁻¹ = {expect:.6} (|Δ| = {err:.1e} < 1e-3)", out.opacity),
        secs,
    }
}

fn fit_cfg() -> FitConfig {
    FitConfig {
        iterations: 3000,
        rays_per_step: 256,
        ..Default::default()
    }
}

fn distill_cfg(parts: usize) -> DistillConfig {
    DistillConfig {
        parts,
        seg_rays: 128,
        ..Default::default()
    }
}

struct Scene {
    data: Dataset,
    field: RadianceField<f64>,
    fit: FitReport,
    fit_secs: f64,
}

fn fit_scene(spec: &SceneSpec, w: &Workers) -> Scene {
    let data = generate(spec, 20, 64, 1, w).unwrap();
    let t = Instant::now();
    let (field, fit) = fit_static(&data.source, &fit_cfg(), w).unwrap();
    Scene {
        data,
        field,
        fit,
        fit_secs: t.elapsed().as_secs_f64(),
    }
}

struct Run {
    out: DistillOutput,
    eval: EvalReport,
    secs: f64,
}

fn distill_scene(scene: &Scene, target_views: usize, w: &Workers) -> partdistill::Result<Run> {
    let k = scene.data.gt.spec.parts();
    let target = scene.data.target.select(&(0..target_views).collect::<Vec<_>>());
    let cfg = distill_cfg(k);
    let t = Instant::now();
    let out = distill(&scene.field, &target, &cfg, w)?;
    let secs = t.elapsed().as_secs_f64();
    let eval = evaluate(&scene.field, &out.head, &out.motion.transforms(), &scene.data.target, Some(&scene.data.gt.spec.joints), cfg.sampling, 0, w)?;
    Ok(Run { out, eval, secs })
}

fn joint_summary(eval: &EvalReport) -> String {
    let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    eval.joints
        .iter()
        .map(|j| format!("part {} ↔ joint {}: e_d {:.3}°, e_p {}, e_g {}°, e_t {}", j.part, j.gt_joint + 1, j.e_d, f(j.e_p), f(j.e_g), f(j.e_t)))
        .collect::<Vec<_>>()
        .join("; ")
}

fn worst<F: Fn(&partdistill::metrics::JointErrors) -> Option<f64>>(eval: &EvalReport, f: F) -> f64 {
    if eval.joints.is_empty() {
        return f64::INFINITY;
    }
    eval.joints.iter().map(|j| f(j).unwrap_or(f64::INFINITY)).fold(0.0, f64::max)
}

fn checkpoint_bytes(scene: &Scene, run: &Run) -> Vec<u8> {
    Checkpoint {
        field: scene.field.clone(),
        head: Some(run.out.head.clone()),
        motions: Some(run.out.motion.twists().to_vec()),
        voxels: Some(run.out.voxels.record()),
    }
    .to_bytes()
}

fn report_bytes(scene: &Scene, run: &Run) -> Vec<u8> {
    let mut b = serde_json::to_vec(&scene.fit).unwrap();
    b.extend(serde_json::to_vec(&run.out.report).unwrap());
    b.extend(serde_json::to_vec(&run.eval).unwrap());
    b
}

fn failed(id: &'static str, what: &str, e: impl std::fmt::Display, secs: f64) -> Line {
    Line {
        id,
        verdict: Verdict::Fail,
        detail: format!("{what}: pipeline error: {e}"),
        secs,
    }
}

fn main() {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let w = Workers::new(Workers::default_count()).unwrap();
    println!("acceptance suite, {} worker(s)", w.count());
    let mut lines = Vec::new();
    let mut emit = |l: Line| {
        l.print();
        lines.push(l);
    };

    emit(reduction_identity());
    emit(gradient_suite());
    emit(chamfer_oracle());
    emit(homogeneous_slab());
    if std::env::var("ACCEPTANCE_QUICK").is_ok_and(|v| v == "1") {
        println!("ACCEPTANCE_QUICK=1: end-to-end criteria 5–10 skipped");
        return;
    }

    // 5: hinged box
    let hinged = fit_scene(&SceneSpec::hinged_box(), &w);
    println!("       hinged box field: holdout PSNR {:.2} dB after {:.0} s", hinged.fit.holdout_psnr, hinged.fit_secs);
    let run5 = distill_scene(&hinged, 20, &w);
    match &run5 {
        Ok(r) => {
            let (e_d, e_g, e_p) = (worst(&r.eval, |j| Some(j.e_d)), worst(&r.eval, |j| j.e_g), worst(&r.eval, |j| j.e_p));
            let miou = r.eval.miou.unwrap_or(0.0);
            let secs = hinged.fit_secs + r.secs;
            let ok = e_d < 2.0 && e_g < 2.0 && e_p < 0.02 && r.eval.psnr >= 22.0 && miou >= 0.85 && secs < 900.0;
            emit(Line {
                id: "5",
                verdict: verdict(ok),
                detail: format!(
                    "hinged box: {}; PSNR {:.2} dB, mIoU {:.3} (e_d, e_g < 2°, e_p < 0.02, PSNR ≥ 22, mIoU ≥ 0.85, < 15 min)",
                    joint_summary(&r.eval),
                    r.eval.psnr,
                    miou
                ),
                secs,
            });
        }
        Err(e) => emit(failed("5", "hinged box", e, hinged.fit_secs)),
    }

    // 6: drawer
    let drawer = fit_scene(&SceneSpec::drawer(), &w);
    match distill_scene(&drawer, 20, &w) {
        Ok(r) => {
            let (e_d, e_t) = (worst(&r.eval, |j| Some(j.e_d)), worst(&r.eval, |j| j.e_t));
            let secs = drawer.fit_secs + r.secs;
            emit(Line {
                id: "6",
                verdict: verdict(e_d < 2.0 && e_t < 0.02 && r.eval.psnr >= 22.0 && secs < 900.0),
                detail: format!("drawer: {}; PSNR {:.2} dB (e_d < 2°, e_t < 0.02, PSNR ≥ 22, < 15 min)", joint_summary(&r.eval), r.eval.psnr),
                secs,
            });
        }
        Err(e) => emit(failed("6", "drawer", e, drawer.fit_secs)),
    }
    drop(drawer);

    // 7: two-door cabinet
    let cabinet = fit_scene(&SceneSpec::two_door_cabinet(), &w);
    match distill_scene(&cabinet, 20, &w) {
        Ok(r) => {
            let (e_d, e_g) = (worst(&r.eval, |j| Some(j.e_d)), worst(&r.eval, |j| j.e_g));
            let miou = r.eval.miou.unwrap_or(0.0);
            let secs = cabinet.fit_secs + r.secs;
            emit(Line {
                id: "7",
                verdict: verdict(e_d < 3.0 && e_g < 3.0 && miou >= 0.80 && secs < 1500.0),
                detail: format!(
                    "two-door cabinet: {}; mIoU {:.3}; init {:?} (e_d, e_g < 3°, mIoU ≥ 0.80, < 25 min)",
                    joint_summary(&r.eval),
                    miou,
                    r.out.report.init.part_cells
                ),
                secs,
            });
        }
        Err(e) => emit(failed("7", "two-door cabinet", e, cabinet.fit_secs)),
    }
    drop(cabinet);

    // 8: few target views, same hinged-box field
    match distill_scene(&hinged, 8, &w) {
        Ok(r) => {
            let (e_d, e_g) = (worst(&r.eval, |j| Some(j.e_d)), worst(&r.eval, |j| j.e_g));
            emit(Line {
                id: "8a",
                verdict: verdict(e_d < 5.0 && e_g < 5.0),
                detail: format!("hinged box, 8 target views: {} (e_d, e_g < 5°)", joint_summary(&r.eval)),
                secs: r.secs,
            });
        }
        Err(e) => emit(failed("8a", "hinged box, 8 target views", e, 0.0)),
    }
    let t = Instant::now();
    let detail = match distill_scene(&hinged, 2, &w) {
        Ok(r) => format!(
            "hinged box, 2 target views: {}; PSNR {:.2} dB; flags {:?}",
            joint_summary(&r.eval),
            r.eval.psnr,
            r.out.report.flags
        ),
        Err(e) => format!("hinged box, 2 target views: initialization failed: {e}"),
    };
    emit(Line {
        id: "8b",
        verdict: Verdict::Note,
        detail,
        secs: t.elapsed().as_secs_f64(),
    });

    // 9 and 10 reuse run 5
    match &run5 {
        Ok(r) => {
            let a = &r.out.report.audit;
            let field_same = a.field_unchanged() && a.field_after == hinged.field.param_hash() && a.field_before == hinged.fit.field_hash;
            emit(Line {
                id: "9",
                verdict: verdict(field_same && a.pose_phases_leave_head() && a.seg_phases_leave_twists() && !a.phases.is_empty()),
                detail: format!(
                    "freezing audit: field hash unchanged {field_same}, pose phases leave head {}, segmentation phases leave twists {} ({} cycles)",
                    a.pose_phases_leave_head(),
                    a.seg_phases_leave_twists(),
                    a.phases.len()
                ),
                secs: 0.0,
            });
            let t = Instant::now();
            let again = fit_scene(&SceneSpec::hinged_box(), &w);
            let detail;
            let ok = match distill_scene(&again, 20, &w) {
                Ok(r2) => {
                    let ck = checkpoint_bytes(&hinged, r) == checkpoint_bytes(&again, &r2);
                    let rep = report_bytes(&hinged, r) == report_bytes(&again, &r2);
                    detail = format!("determinism: rerun of 5 with seed 0 and {} worker(s): checkpoint identical {ck}, reports identical {rep}", w.count());
                    ck && rep
                }
                Err(e) => {
                    detail = format!("determinism: rerun failed: {e}");
                    false
                }
            };
            emit(Line {
                id: "10",
                verdict: verdict(ok),
                detail,
                secs: t.elapsed().as_secs_f64(),
            });
        }
        Err(_) => {
            for id in ["9", "10"] {
                emit(Line {
                    id,
                    verdict: Verdict::Fail,
                    detail: "needs a successful run 5".into(),
                    secs: 0.0,
                });
            }
        }
    }

    let fails = lines.iter().filter(|l| matches!(l.verdict, Verdict::Fail)).count();
    let passes = lines.iter().filter(|l| matches!(l.verdict, Verdict::Pass)).count();
    println!("acceptance: {passes} passed, {fails} failed, {} recorded", lines.len() - passes - fails);
    if strict && fails > 0 {
        std::process::exit(1);
    }
}
