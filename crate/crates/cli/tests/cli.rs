use std::path::Path;
use std::process::{Command, Output};

use linsplat::geometry::{CameraRecord, Primitive3D};
use linsplat::io::{load_png, load_raw, save_ply, write_dataset};
use linsplat::kernel::KernelSpec;
use linsplat::raster::RenderSettings;
use linsplat::train::fixture::{ring_cameras, synthetic_fixture, FixtureSpec};
use nalgebra::Vector3;

fn linsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_linsplat")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn unknown_flag_exits_1() {
    let out = linsplat(&["fit2d", "--target", "pattern:stripes8", "--no-such-flag"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn config_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let bad_kernel = linsplat(&["fit2d", "--target", "pattern:stripes8", "--kernel", "box", "--out", path(&out_dir)]);
    assert_eq!(code(&bad_kernel), 1, "{}", String::from_utf8_lossy(&bad_kernel.stderr));
    let bad_lambda = linsplat(&["fit2d", "--target", "pattern:stripes8", "--lambda", "-1", "--out", path(&out_dir)]);
    assert_eq!(code(&bad_lambda), 1);
    let over_budget = linsplat(&["fit2d", "--target", "pattern:radial", "--size", "32", "--budget", "5000", "--out", path(&out_dir)]);
    assert_eq!(code(&over_budget), 1);
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&linsplat(&["--help"])), 0);
}

#[test]
fn fit2d_writes_run_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = linsplat(&[
        "fit2d", "--target", "pattern:stripes8", "--size", "32", "--budget", "64", "--iters", "20",
        "--snapshot-every", "10", "--kernel", "linear", "--out", path(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["run.json", "log.jsonl", "fit.png", "target.png", "final.ply"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let run: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("run.json")).unwrap()).unwrap();
    assert!(run.to_string().contains("linear"));
    let log = std::fs::read_to_string(out_dir.join("log.jsonl")).unwrap();
    for line in log.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }
    assert_eq!(load_png(&out_dir.join("fit.png")).unwrap().dims(), (32, 32));
}

#[test]
fn fit2d_same_seed_same_ply() {
    let dir = tempfile::tempdir().unwrap();
    let mut bytes = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = linsplat(&[
            "fit2d", "--target", "pattern:checker4", "--size", "32", "--budget", "32", "--iters", "15",
            "--seed", "4", "--out", path(&out_dir),
        ]);
        assert_eq!(code(&out), 0);
        bytes.push(std::fs::read(out_dir.join("final.ply")).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}

#[test]
fn render_writes_png_and_transmittance() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("scene.ply");
    let prims = vec![
        Primitive3D::isotropic(Vector3::new(0.0, 0.0, 0.0), 0.3, 0.8, Vector3::new(0.9, 0.2, 0.1), 0),
        Primitive3D::isotropic(Vector3::new(0.4, 0.2, 0.3), 0.2, 0.6, Vector3::new(0.1, 0.4, 0.9), 0),
    ];
    save_ply(&ply, &prims).unwrap();
    let cam = &ring_cameras(1, 40)[0];
    let cam_path = dir.path().join("camera.json");
    std::fs::write(&cam_path, serde_json::to_string(&CameraRecord::from_camera(cam)).unwrap()).unwrap();
    let png = dir.path().join("view.png");
    let raw = dir.path().join("t.raw");
    let out = linsplat(&[
        "render", "--ply", path(&ply), "--camera", path(&cam_path), "--out", path(&png),
        "--transmittance", path(&raw), "--kernel", "linear",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(load_png(&png).unwrap().dims(), (40, 40));
    let (w, h, t) = load_raw(&raw).unwrap();
    assert_eq!((w, h), (40, 40));
    assert!(t.iter().any(|&v| v < 0.5) && t.iter().all(|&v| (0.0..=1.0).contains(&v)));

    let missing = linsplat(&["render", "--ply", path(&dir.path().join("nope.ply")), "--camera", path(&cam_path), "--out", path(&png)]);
    assert_ne!(code(&missing), 0);
}

#[test]
fn fit3d_and_eval_on_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let spec = KernelSpec::named("linear").unwrap();
    let fs = FixtureSpec {
        primitives: 10,
        cameras: 4,
        size: 32,
        ..FixtureSpec::default()
    };
    let fx = synthetic_fixture(&fs, &spec, &RenderSettings::default()).unwrap();
    let manifest = write_dataset(&dir.path().join("scene"), &fx.data).unwrap();
    let out_dir = dir.path().join("run");
    let out = linsplat(&[
        "fit3d", "--scene", path(&manifest), "--iters", "20", "--sh-degree", "0", "--densify", "off",
        "--out", path(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["run.json", "log.jsonl", "final.ply"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let eval = linsplat(&["eval", "--ply", path(&out_dir.join("final.ply")), "--scene", path(&manifest)]);
    assert_eq!(code(&eval), 0);
    let rows = String::from_utf8(eval.stdout).unwrap();
    assert_eq!(rows.lines().count(), 4);

    let bad = linsplat(&["fit3d", "--scene", path(&manifest), "--densify-preset", "4dgs", "--out", path(&out_dir)]);
    assert_eq!(code(&bad), 1);
}

#[test]
fn check_grads_reports_success() {
    let out = linsplat(&["check-grads", "--scenes", "2", "--splats", "3", "--size", "16", "--kernel", "cosine"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bench.csv");
    let out = linsplat(&[
        "bench", "--splats", "500", "--width", "32", "--height", "32", "--repeats", "1", "--out", path(&csv),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("kernel,"));
}
