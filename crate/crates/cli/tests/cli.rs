use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use partdistill::dataio::{pnm, read_json, Checkpoint, ObservationSet};
use partdistill::distill::RigidMotion;
use partdistill::field::PartModel;
use partdistill::parallel::Workers;
use partdistill::render::{render_image, render_image_composite, SamplingConfig};
use tempfile::TempDir;

const SMALL: &str = "workers = 1
fit.iterations = 300
fit.rays_per_step = 256
fit.shape.resolution = 32
distill.iteration_scale = 0.01
distill.seg_rays = 64
distill.seg_pretrain_iters = 20
distill.voxel_resolution = 32
distill.refined_resolution = 48
distill.cycles = 2
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_partdistill"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn partdistill")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

/// A small hinged box fitted and distilled once for the whole file.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let f = Fixture { dir: TempDir::new().unwrap() };
        std::fs::write(f.path("small.cfg"), SMALL).unwrap();
        let cfg = f.path("small.cfg");
        ok(&run(&["gen", "--template", "hinged_box", "--views", "8", "--res", "32", "--out", s(&f.path("data"))]));
        ok(&run(&["--config", s(&cfg), "fit-static", "--data", s(&f.path("data/source")), "--out", s(&f.path("field.ckpt"))]));
        ok(&run(&[
            "--config",
            s(&cfg),
            "distill",
            "--field",
            s(&f.path("field.ckpt")),
            "--target",
            s(&f.path("data/target")),
            "--parts",
            "2",
            "--out",
            s(&f.path("model.ckpt")),
        ]));
        f
    })
}

fn count_files(dir: &Path) -> usize {
    std::fs::read_dir(dir).map(|d| d.count()).unwrap_or(0)
}

#[test]
fn gen_writes_both_states() {
    let t = TempDir::new().unwrap();
    let out = t.path().join("a");
    ok(&run(&["--seed", "3", "gen", "--template", "drawer", "--views", "3", "--res", "8", "--out", s(&out)]));
    for state in ["source", "target"] {
        assert_eq!(count_files(&out.join(state).join("images")), 3);
        assert_eq!(count_files(&out.join(state).join("masks")), 3);
        assert!(out.join(state).join("manifest.json").is_file());
        assert_eq!(ObservationSet::read(&out.join(state)).unwrap().len(), 3);
    }
    assert!(out.join("scene_gt.json").is_file());

    let again = t.path().join("b");
    ok(&run(&["--seed", "3", "gen", "--template", "drawer", "--views", "3", "--res", "8", "--out", s(&again)]));
    for rel in ["scene_gt.json", "source/manifest.json", "target/images/view_002.ppm", "target/labels/view_001.pgm"] {
        assert_eq!(std::fs::read(out.join(rel)).unwrap(), std::fs::read(again.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn gen_with_zero_views_is_a_usage_error() {
    let t = TempDir::new().unwrap();
    let o = run(&["gen", "--template", "hinged_box", "--views", "0", "--out", s(t.path())]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["gen", "--template", "lamp", "--out", s(t.path())]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_without_manifest_exits_2() {
    let t = TempDir::new().unwrap();
    let o = run(&["fit-static", "--data", s(t.path()), "--out", s(&t.path().join("f.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("manifest.json"), "{}", stderr(&o));
}

#[test]
fn fit_with_zero_iterations_writes_the_initial_field() {
    let f = fixture();
    let t = TempDir::new().unwrap();
    let out = t.path().join("f.ckpt");
    ok(&run(&["--config", s(&f.path("small.cfg")), "fit-static", "--data", s(&f.path("data/source")), "--out", s(&out), "--iterations", "0"]));
    let ck = Checkpoint::load(&out).unwrap();
    assert!(ck.head.is_none() && ck.motions.is_none());
    let rep: serde_json::Value = read_json(&t.path().join("f.report.json")).unwrap();
    assert_eq!(rep["steps"], 0);
}

#[test]
fn unknown_config_key_is_rejected() {
    let t = TempDir::new().unwrap();
    let cfg = t.path().join("bad.cfg");
    std::fs::write(&cfg, "fit.iteratoins = 3\n").unwrap();
    let o = run(&["--config", s(&cfg), "fit-static", "--data", s(t.path()), "--out", s(&t.path().join("f.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("iteratoins"));
}

#[test]
fn distill_reports_a_joint() {
    let f = fixture();
    let ck = Checkpoint::load(&f.path("model.ckpt")).unwrap();
    assert!(ck.field.is_frozen());
    assert_eq!(ck.head.as_ref().unwrap().parts(), 2);
    assert_eq!(ck.motions.as_ref().unwrap().len(), 2);
    assert!(ck.voxels.is_some());
    let rep: serde_json::Value = read_json(&f.path("model.report.json")).unwrap();
    assert_eq!(rep["workers"], 1);
    let joint = &rep["joints"][0];
    assert!(joint["joint_type"].is_string(), "{joint}");
}

#[test]
fn distill_rejects_a_single_part() {
    let f = fixture();
    let t = TempDir::new().unwrap();
    let o = run(&[
        "distill",
        "--field",
        s(&f.path("field.ckpt")),
        "--target",
        s(&f.path("data/target")),
        "--parts",
        "1",
        "--out",
        s(&t.path().join("m.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("need ≥ 2 parts"), "{}", stderr(&o));
}

#[test]
fn distill_without_motion_fails() {
    let f = fixture();
    let t = TempDir::new().unwrap();
    let o = run(&[
        "--config",
        s(&f.path("small.cfg")),
        "distill",
        "--field",
        s(&f.path("field.ckpt")),
        "--target",
        s(&f.path("data/source")),
        "--out",
        s(&t.path().join("m.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no motion detected"), "{}", stderr(&o));
    assert!(!t.path().join("m.ckpt").exists());
}

#[test]
fn distill_is_deterministic() {
    let f = fixture();
    let t = TempDir::new().unwrap();
    let out = t.path().join("again.ckpt");
    ok(&run(&[
        "--config",
        s(&f.path("small.cfg")),
        "distill",
        "--field",
        s(&f.path("field.ckpt")),
        "--target",
        s(&f.path("data/target")),
        "--parts",
        "2",
        "--out",
        s(&out),
    ]));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(f.path("model.ckpt")).unwrap());
    assert_eq!(std::fs::read(t.path().join("again.report.json")).unwrap(), std::fs::read(f.path("model.report.json")).unwrap());
}

#[test]
fn eval_with_and_without_ground_truth() {
    let f = fixture();
    let t = TempDir::new().unwrap();
    let full = t.path().join("full.json");
    let o = run(&[
        "--workers",
        "1",
        "eval",
        "--model",
        s(&f.path("model.ckpt")),
        "--target",
        s(&f.path("data/target")),
        "--gt",
        s(&f.path("data/scene_gt.json")),
        "--out",
        s(&full),
    ]);
    ok(&o);
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("e_d") && table.contains("mIoU"), "{table}");
    let rep: serde_json::Value = read_json(&full).unwrap();
    assert_eq!(rep["joints"].as_array().unwrap().len(), 1);
    let miou = rep["miou"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&miou));

    let bare = t.path().join("bare.json");
    let o = run(&["--workers", "1", "eval", "--model", s(&f.path("model.ckpt")), "--target", s(&f.path("data/target")), "--out", s(&bare)]);
    ok(&o);
    assert!(!String::from_utf8_lossy(&o.stdout).contains("mIoU"));
    let psnr_only: serde_json::Value = read_json(&bare).unwrap();
    assert!(psnr_only["joints"].as_array().unwrap().is_empty());
    assert!(psnr_only.get("miou").is_none());
    assert_eq!(psnr_only["psnr"], rep["psnr"]);
}

#[test]
fn eval_of_a_static_field_is_rejected() {
    let f = fixture();
    let t = TempDir::new().unwrap();
    let o = run(&["eval", "--model", s(&f.path("field.ckpt")), "--target", s(&f.path("data/target")), "--out", s(&t.path().join("e.json"))]);
    assert_eq!(o.status.code(), Some(2));
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn max_abs_diff(a: &[u8], b: &[u8]) -> u8 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}

#[test]
fn render_endpoints_match_source_and_target_states() {
    let f = fixture();
    let t = TempDir::new().unwrap();
    let out = t.path().join("frames");
    let target = f.path("data/target");
    // Stratified samples only, so the composite and plain renderers see the same points.
    let cfg_path = t.path().join("strat.cfg");
    std::fs::write(&cfg_path, "distill.sampling.n_fine = 0\n").unwrap();
    ok(&run(&[
        "--workers",
        "1",
        "--config",
        s(&cfg_path),
        "render",
        "--model",
        s(&f.path("model.ckpt")),
        "--data",
        s(&target),
        "--view",
        "1",
        "--interp",
        "4",
        "--out",
        s(&out),
    ]));
    assert_eq!(count_files(&out), 10);

    let ck = Checkpoint::load(&f.path("model.ckpt")).unwrap();
    let head = ck.head.as_ref().unwrap();
    let motion = RigidMotion::from_twists(ck.motions.clone().unwrap()).unwrap();
    let cam = ObservationSet::read(&target).unwrap().camera(1).unwrap();
    let pool = Workers::new(1).unwrap();
    let cfg = SamplingConfig { n_fine: 0, ..Default::default() };

    let first = pnm::read(&out.join("frame_000.ppm")).unwrap();
    let plain = render_image(&ck.field, &cam, cfg, 0, &pool).unwrap();
    let plain: Vec<u8> = plain.rgb().iter().flatten().map(|&c| to_u8(c)).collect();
    assert!(max_abs_diff(&first.data, &plain) <= 1);

    let last = pnm::read(&out.join("frame_004.ppm")).unwrap();
    let moved = render_image_composite(&ck.field, head, &motion.part_motions().unwrap(), &cam, cfg, 0, &pool).unwrap();
    let moved_rgb: Vec<u8> = moved.rgb().iter().flatten().map(|&c| to_u8(c)).collect();
    assert!(max_abs_diff(&last.data, &moved_rgb) <= 1);
    assert_eq!(pnm::read(&out.join("labels_004.pgm")).unwrap().data, moved.labels());
}
