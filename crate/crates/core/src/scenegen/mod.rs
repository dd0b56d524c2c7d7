//! Procedural articulated scenes with exact ground truth.

mod spec;

pub use spec::{PartGeometry, SceneSpec, Template, MIN_JOINT_ANGLE_DEG, MIN_JOINT_DISTANCE};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{write_json, ObservationSet, State, View};
use crate::field::{PartModel, RadianceModel};
use crate::geom::{Aabb, Camera, Intrinsics, MatrixRows, Transform, Vec3};
use crate::parallel::{mix_seed, Workers};
use crate::render::{render_ray_traced, RayTrace, SampleSet};
use crate::{Error, Real, Result};

/// Sample count of the reference renderer.
pub const ORACLE_SAMPLES: usize = 512;
/// Radius of the camera sphere.
pub const CAMERA_RADIUS: f64 = 2.5;
/// Focal length in units of image width.
pub const FOCAL_PER_PIXEL: f64 = 1.4;
pub const GT_FILE: &str = "scene_gt.json";

/// Signed distance to a rounded box centered at the origin.
fn rounded_box_sd(p: Vec3<f64>, half: Vec3<f64>, r: f64) -> f64 {
    let q = p.abs() - half + Vec3::splat(r);
    let outside = q.max_elem(Vec3::zero()).norm();
    outside + q.max_component().min(0.0) - r
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn lattice(seed: u64, i: i64, j: i64, k: i64) -> f64 {
    let h = mix_seed(mix_seed(mix_seed(seed, i as u64), j as u64), k as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in [0, 1].
fn value_noise(seed: u64, p: Vec3<f64>) -> f64 {
    let f = [p.x.floor(), p.y.floor(), p.z.floor()];
    let t = [smoothstep(p.x - f[0]), smoothstep(p.y - f[1]), smoothstep(p.z - f[2])];
    let (i, j, k) = (f[0] as i64, f[1] as i64, f[2] as i64);
    let mut acc = 0.0;
    for c in 0..8 {
        let (dx, dy, dz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
        let w = (if dx == 1 { t[0] } else { 1.0 - t[0] })
            * (if dy == 1 { t[1] } else { 1.0 - t[1] })
            * (if dz == 1 { t[2] } else { 1.0 - t[2] });
        acc += w * lattice(seed, i + dx as i64, j + dy as i64, k + dz as i64);
    }
    acc
}

const TEXTURE_FREQUENCY: f64 = 6.0;

/// Closed-form density and color of a scene in one articulation state.
///
/// Latent layout is `[r, g, b, part]`, so a renderer can recover the part
/// owning each sample.
#[derive(Clone, Debug)]
pub struct AnalyticScene {
    spec: SceneSpec,
    state: State,
    inverses: Vec<Transform<f64>>,
    bounds: Aabb<f64>,
}

impl AnalyticScene {
    pub fn new(spec: &SceneSpec, state: State) -> Result<Self> {
        spec.validate()?;
        let inverses = match state {
            State::Source => vec![Transform::identity(); spec.parts()],
            State::Target => spec.motions()?.iter().map(|m| m.inverse()).collect(),
        };
        Ok(Self {
            spec: spec.clone(),
            state,
            inverses,
            bounds: Aabb::unit_cube(),
        })
    }

    pub fn spec(&self) -> &SceneSpec {
        &self.spec
    }

    pub fn state(&self) -> State {
        self.state
    }

    /// `(σ, part, rgb)` at `x`; the part is the one with the smallest signed
    /// distance (lowest index on ties).
    pub fn eval(&self, x: Vec3<f64>) -> (f64, usize, [f64; 3]) {
        let (sd, part, local) = self.nearest(x);
        let s = self.spec.softness;
        let sigma = self.spec.sigma_max * smoothstep((s - sd) / (2.0 * s));
        if sigma == 0.0 {
            return (0.0, part, [0.0; 3]);
        }
        (sigma, part, self.texture(part, local))
    }

    fn nearest(&self, x: Vec3<f64>) -> (f64, usize, Vec3<f64>) {
        let mut best = (f64::INFINITY, 0, Vec3::zero());
        for (l, (p, inv)) in self.spec.parts.iter().zip(&self.inverses).enumerate() {
            let y = inv.apply_point(x);
            let sd = rounded_box_sd(y - Vec3::from_f64(p.center), Vec3::from_f64(p.half_extents), p.rounding);
            if sd < best.0 {
                best = (sd, l, y);
            }
        }
        best
    }

    fn texture(&self, part: usize, y: Vec3<f64>) -> [f64; 3] {
        let n = value_noise(mix_seed(self.spec.texture_seed, part as u64), y * TEXTURE_FREQUENCY);
        let g = 0.75 + 0.5 * n;
        let c = self.spec.parts[part].color;
        [(c[0] * g).clamp(0.0, 1.0), (c[1] * g).clamp(0.0, 1.0), (c[2] * g).clamp(0.0, 1.0)]
    }
}

/// `(σ, part, color)` of `spec` in `state` at `x`.
pub fn analytic_density(spec: &SceneSpec, state: State, x: Vec3<f64>) -> Result<(f64, usize, [f64; 3])> {
    Ok(AnalyticScene::new(spec, state)?.eval(x))
}

impl RadianceModel<f64> for AnalyticScene {
    fn feature_dim(&self) -> usize {
        4
    }

    fn bounds(&self) -> &Aabb<f64> {
        &self.bounds
    }

    fn query(&self, x: Vec3<f64>, z: &mut [f64]) -> f64 {
        let (sigma, part, c) = self.eval(x);
        z[..3].copy_from_slice(&c);
        z[3] = part as f64;
        sigma
    }

    fn color(&self, z: &[f64], _d: Vec3<f64>) -> [f64; 3] {
        [z[0], z[1], z[2]]
    }
}

/// Exact segmentation for latents produced by [`AnalyticScene`].
#[derive(Clone, Copy, Debug)]
pub struct OracleParts {
    pub parts: usize,
}

impl<T: Real> PartModel<T> for OracleParts {
    fn parts(&self) -> usize {
        self.parts
    }

    fn probabilities(&self, z: &[T], out: &mut [T]) {
        let id = z[3].to_f64_lossy().round() as usize;
        for (l, o) in out[..self.parts].iter_mut().enumerate() {
            *o = if l == id { T::one() } else { T::zero() };
        }
    }
}

/// Reference render of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleRender {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    pub depth: Vec<f64>,
    /// 1 where opacity > 0.5.
    pub mask: Vec<u8>,
    /// 0 background, ℓ + 1 for the part with the largest weight.
    pub labels: Vec<u8>,
}

impl OracleRender {
    /// RGB quantized to 8 bits.
    pub fn rgb8(&self) -> Vec<u8> {
        self.rgb
            .iter()
            .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }
}

pub fn render_oracle(scene: &AnalyticScene, cam: &Camera<f64>, workers: &Workers) -> Result<OracleRender> {
    let (w, h) = (cam.width, cam.height);
    let k = scene.spec.parts();
    let px: Result<Vec<_>> = workers
        .map_indices(w * h, |idx| {
            let Some(ray) = cam.pixel_center_ray(idx % w, idx / w, &scene.bounds)? else {
                return Ok(([0.0; 3], 0.0, 0.0, 0u8));
            };
            let samples = SampleSet::uniform(&ray, ORACLE_SAMPLES);
            let mut trace = RayTrace::default();
            let out = render_ray_traced(scene, &ray, &samples, &mut trace);
            let mut weights = vec![0.0; k];
            for i in 0..samples.len() {
                let part = trace.latent(i)[3] as usize;
                weights[part] += trace.trans[i] * trace.alpha[i];
            }
            let mut label = 0u8;
            if out.opacity > 0.5 {
                let mut best = 0;
                for l in 1..k {
                    if weights[l] > weights[best] {
                        best = l;
                    }
                }
                label = best as u8 + 1;
            }
            Ok((out.color, out.opacity, out.depth, label))
        })
        .into_iter()
        .collect();
    let px = px?;
    Ok(OracleRender {
        width: w,
        height: h,
        rgb: px.iter().map(|p| p.0).collect(),
        opacity: px.iter().map(|p| p.1).collect(),
        depth: px.iter().map(|p| p.2).collect(),
        mask: px.iter().map(|p| u8::from(p.1 > 0.5)).collect(),
        labels: px.iter().map(|p| p.3).collect(),
    })
}

pub fn intrinsics_for(res: usize) -> Intrinsics<f64> {
    let f = FOCAL_PER_PIXEL * res as f64;
    Intrinsics {
        fx: f,
        fy: f,
        cx: res as f64 / 2.0,
        cy: res as f64 / 2.0,
    }
}

/// `n` cameras on a Fibonacci sphere of radius 2.5, looking at the origin
/// with +y up. The seed rotates the spiral about the y axis.
pub fn fibonacci_cameras(n: usize, res: usize, seed: u64) -> Result<Vec<Camera<f64>>> {
    if n == 0 || res == 0 {
        return Err(Error::invalid("need at least one view and a positive resolution"));
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let phase = ChaCha8Rng::seed_from_u64(seed).gen::<f64>() * std::f64::consts::TAU;
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let phi = phase + golden * i as f64;
            let eye = Vec3::new(r * phi.cos(), y, r * phi.sin()) * CAMERA_RADIUS;
            Camera::look_at(intrinsics_for(res), eye, Vec3::zero(), Vec3::new(0.0, 1.0, 0.0), res, res)
        })
        .collect()
}

/// Ground-truth sidecar written next to a generated dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneGt {
    #[serde(flatten)]
    pub spec: SceneSpec,
    /// Source→target motion per part, row-major.
    pub motions: Vec<MatrixRows>,
}

impl SceneGt {
    pub fn new(spec: &SceneSpec) -> Result<Self> {
        Ok(Self {
            spec: spec.clone(),
            motions: spec.motions()?.iter().map(MatrixRows::from).collect(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let gt: Self = crate::dataio::read_json(path)?;
        gt.spec.validate()?;
        Ok(gt)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub source: ObservationSet,
    pub target: ObservationSet,
    pub gt: SceneGt,
}

fn observe(spec: &SceneSpec, state: State, cams: &[Camera<f64>], workers: &Workers) -> Result<ObservationSet> {
    let scene = AnalyticScene::new(spec, state)?;
    let mut views = Vec::with_capacity(cams.len());
    for cam in cams {
        let r = render_oracle(&scene, cam, workers)?;
        views.push(View {
            world_from_camera: cam.world_from_camera,
            rgb: r.rgb8(),
            mask: r.mask,
            labels: Some(r.labels),
        });
    }
    let c = cams[0];
    Ok(ObservationSet {
        state,
        width: c.width,
        height: c.height,
        intrinsics: c.intrinsics,
        views,
    })
}

/// Renders both articulation states from the same camera rig.
pub fn generate(spec: &SceneSpec, n_views: usize, res: usize, seed: u64, workers: &Workers) -> Result<Dataset> {
    spec.validate()?;
    let cams = fibonacci_cameras(n_views, res, seed)?;
    Ok(Dataset {
        source: observe(spec, State::Source, &cams, workers)?,
        target: observe(spec, State::Target, &cams, workers)?,
        gt: SceneGt::new(spec)?,
    })
}

/// [`generate`], then writes `source/`, `target/` and `scene_gt.json` under `out`.
pub fn gen_dataset(spec: &SceneSpec, n_views: usize, res: usize, seed: u64, out: &Path, workers: &Workers) -> Result<Dataset> {
    let d = generate(spec, n_views, res, seed, workers)?;
    d.source.write(&out.join("source"))?;
    d.target.write(&out.join("target"))?;
    write_json(&out.join(GT_FILE), &d.gt)?;
    Ok(d)
}
