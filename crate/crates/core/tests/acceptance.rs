//! End-to-end acceptance run. Prints one `PASS`/`FAIL` line per criterion
//! and exits non-zero if any criterion fails. Numeric arguments select a
//! subset, e.g. `cargo test --test acceptance -- 1 2 5`.

use std::time::{Duration, Instant};

use linsplat::bench::{run_bench, BenchConfig};
use linsplat::densify::{densify_and_prune, DensifySchedule, DensifyStats, DensifyThresholds};
use linsplat::geometry::{logit, splat_from_cov2d, Primitive3D};
use linsplat::gradcheck::{compare, random_scene, Tolerance};
use linsplat::gradients::{verify_ags_contract, Ags};
use linsplat::io::{save_ply, RunLog};
use linsplat::kernel::{ags_weight, registry, KernelConfig, KernelSpec};
use linsplat::losses::{combined_loss, loss_terms, ssim, LossWeights};
use linsplat::pattern::generate_pattern;
use linsplat::raster::{rasterize, RenderSettings};
use linsplat::train::fixture::{synthetic_fixture, FixtureSpec};
use linsplat::train::{fit2d, fit3d, Fit2dResult, TrainConfig, TrainSink};
use linsplat::Image;
use nalgebra::{Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FAMILIES: [&str; 5] = ["gaussian", "laplacian", "cosine", "quadratic", "linear"];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn within_budget(o: Outcome, elapsed: Duration, budget: Duration) -> Outcome {
    if elapsed > budget {
        Outcome::new(false, format!("{} (over budget {:.0}s)", o.detail, budget.as_secs_f64()))
    } else {
        o
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn kernel_suite() -> Outcome {
    let mut bad = Vec::new();
    let spec = |n: &str, l: f64| KernelSpec::with_lambda(n, l).unwrap();
    let evals = [
        ("linear", 2.5, 0.0, 1.0),
        ("linear", 2.5, 2.5, 0.0),
        ("linear", 2.5, 1.25, 0.5),
        ("quadratic", 6.0, 3.0, 0.75),
        ("gaussian", 1.0, 1.0, 0.6065306597),
        ("cosine", 2.5, 1.25, 0.5),
    ];
    for (n, l, d, want) in evals {
        let got = spec(n, l).eval(d).unwrap();
        if !close(got, want, 1e-10) {
            bad.push(format!("eval {n}({d})={got}"));
        }
    }
    let derivs = [
        ("linear", 2.5, 1.0, -0.4),
        ("linear", 2.5, 3.0, 0.0),
        ("gaussian", 1.0, 1.0, -0.6065306597),
    ];
    for (n, l, d, want) in derivs {
        let got = spec(n, l).derivative(d).unwrap();
        if !close(got, want, 1e-10) {
            bad.push(format!("derivative {n}({d})={got}"));
        }
    }
    for (d, want) in [(0.0, 1.0), (1.0, 0.3678794412), (2.0, 0.0183156389)] {
        let got = ags_weight(d).unwrap();
        if !close(got, want, 1e-10) {
            bad.push(format!("ags_weight({d})={got}"));
        }
    }
    let radii = [("linear", 2.5), ("quadratic", 6.0), ("gaussian", 3.0)];
    for (n, want) in radii {
        let got = KernelSpec::named(n).unwrap().support_radius();
        if got != want {
            bad.push(format!("support {n}={got}"));
        }
    }
    if spec("linear", 2.5).eval(-1.0).is_ok() || spec("linear", 2.5).eval(f64::NAN).is_ok() {
        bad.push("domain errors".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for name in FAMILIES {
        let s = KernelSpec::named(name).unwrap();
        let edges = [0.0, s.lambda(), s.support_radius()];
        let mut n = 0;
        while n < 1000 {
            let d = rng.random_range(0.0..1.2 * s.support_radius());
            if edges.iter().any(|e| (d - e).abs() < 1e-4) {
                continue;
            }
            let fd = (s.eval(d + h).unwrap() - s.eval(d - h).unwrap()) / (2.0 * h);
            let err = (fd - s.derivative(d).unwrap()).abs();
            worst = worst.max(err);
            if err > 1e-5 {
                bad.push(format!("{name} derivative at {d}: {err:.2e}"));
            }
            n += 1;
        }
    }
    Outcome::new(bad.is_empty(), format!("max FD error {worst:.2e}; {}", summary(&bad)))
}

fn summary(bad: &[String]) -> String {
    match bad.len() {
        0 => "no failures".into(),
        n => format!("{n} failures, first: {}", bad[0]),
    }
}

fn alignment_ratio() -> Outcome {
    // ∫ max(0, 1 - |t|/λ) dt is the triangle area λ.
    let linear = KernelSpec::named("linear").unwrap().lambda();
    let gaussian = (2.0 * std::f64::consts::PI).sqrt();
    let ratio = linear / gaussian;
    Outcome::new((ratio - 1.0).abs() <= 0.003, format!("ratio {ratio:.5}"))
}

fn random_splats(rng: &mut ChaCha8Rng, spec: &KernelSpec, size: usize, n: usize) -> Vec<linsplat::geometry::Splat2D> {
    let mut out = Vec::new();
    for i in 0..n {
        let th: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (s, c) = th.sin_cos();
        let r = Matrix2::new(c, -s, s, c);
        let sx: f64 = rng.random_range(0.5..5.0);
        let sy: f64 = rng.random_range(0.5..5.0);
        let cov = r * Matrix2::new(sx * sx, 0.0, 0.0, sy * sy) * r.transpose();
        let mean = Vector2::new(rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
        let depth = 1.0 + i as f64 * 0.01 + rng.random_range(0.0..0.005);
        let opacity = rng.random_range(0.05..1.0);
        if let Some(sp) = splat_from_cov2d(mean, &cov, depth, Vector3::repeat(1.0), opacity, spec, size, size).unwrap() {
            out.push(sp);
        }
    }
    out
}

fn blend_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let size = 32;
    let mut worst: f64 = 0.0;
    for scene in 0..50 {
        let spec = KernelSpec::named(FAMILIES[scene % 5]).unwrap();
        let n = rng.random_range(1..40);
        let splats = random_splats(&mut rng, &spec, size, n);
        let out = rasterize(&splats, &spec, &RenderSettings::default(), size, size).unwrap();
        for i in 0..size * size {
            worst = worst.max((out.image.data()[3 * i] + out.final_transmittance[i] - 1.0).abs());
        }
    }
    Outcome::new(worst <= 1e-5, format!("50 scenes, max |sum - 1| {worst:.2e}"))
}

fn gradient_acceptance() -> Outcome {
    let gaussian = KernelSpec::new(registry().get("gaussian").unwrap(), None, Some(8.0)).unwrap();
    let cosine = KernelSpec::named("cosine").unwrap();
    let mut checked = 0;
    let mut failed = 0;
    let mut first = None;
    for seed in 0..20 {
        for spec in [&gaussian, &cosine] {
            let scene = random_scene(seed, 16, 32, 1);
            for r in compare(&scene, spec, 1e-4, Tolerance::default()).unwrap() {
                checked += 1;
                if !r.pass {
                    failed += 1;
                    first.get_or_insert(format!("{} seed {seed} {}[{}] {} vs {}", spec.name(), r.group, r.component, r.analytic, r.numeric));
                }
            }
        }
    }
    let tail = first.map(|f| format!(", first: {f}")).unwrap_or_default();
    Outcome::new(failed == 0, format!("20 scenes x 2 kernels, {failed}/{checked} components off{tail}"))
}

fn ags_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let size = 24;
    let mut notes = Vec::new();
    let mut pass = true;
    for name in FAMILIES {
        let spec = KernelSpec::named(name).unwrap();
        let cov = Matrix2::new(6.0, 1.5, 1.5, 3.0);
        let splat = splat_from_cov2d(Vector2::new(11.3, 12.6), &cov, 1.0, Vector3::new(0.7, 0.4, 0.2), 0.8, &spec, size, size)
            .unwrap()
            .unwrap();
        let d_image = Image::from_fn(size, size, |_, _| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let report = verify_ags_contract(&splat, &spec, size, size, &d_image, Ags::ON).unwrap();
        let ok = report.exact && report.max_weight_error <= 1e-12 && !report.pixels.is_empty();
        pass &= ok;
        notes.push(format!("{name} {}px", report.pixels.len()));
    }
    Outcome::new(pass, notes.join(", "))
}

fn noise(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
}

fn brute_ssim(x: &Image, y: &Image) -> f64 {
    let mut win = [[0.0; 11]; 11];
    let mut sum = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            sum += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let (w, h) = x.dims();
    let (mut total, mut count) = (0.0, 0.0);
    for ch in 0..3 {
        for oy in 0..=h - 11 {
            for ox in 0..=w - 11 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in win.iter().enumerate() {
                    for (j, g) in row.iter().enumerate() {
                        let g = g / sum;
                        let a = x.get(ox + j, oy + i)[ch];
                        let b = y.get(ox + j, oy + i)[ch];
                        mx += g * a;
                        my += g * b;
                        xx += g * a * a;
                        yy += g * b * b;
                        xy += g * a * b;
                    }
                }
                let (sx, sy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * sxy + c2) / ((mx * mx + my * my + c1) * (sx + sy + c2));
                count += 1.0;
            }
        }
    }
    total / count
}

fn loss_suite() -> Outcome {
    let w = LossWeights::default();
    let a = noise(20, 15, 1);
    let b = noise(20, 15, 2);
    let t = loss_terms(&a, &b).unwrap();
    let (l, _) = combined_loss(&a, &b, &w).unwrap();
    let decomp = (l - (0.6 * t.l1 + 0.2 * t.l2 + 0.2 * (1.0 - t.ssim))).abs();
    let ssim_err = (ssim(&a, &b).unwrap() - brute_ssim(&a, &b)).abs();

    let pred = noise(16, 16, 3).map(|v| 0.1 + 0.8 * v);
    let gt = noise(16, 16, 4);
    let (_, grad) = combined_loss(&pred, &gt, &w).unwrap();
    let h = 1e-6;
    let mut fd_err: f64 = 0.0;
    for i in 0..pred.data().len() {
        let mut p = pred.clone();
        p.data_mut()[i] += h;
        let lp = combined_loss(&p, &gt, &w).unwrap().0;
        p.data_mut()[i] -= 2.0 * h;
        let lm = combined_loss(&p, &gt, &w).unwrap().0;
        fd_err = fd_err.max(((lp - lm) / (2.0 * h) - grad.data()[i]).abs());
    }
    Outcome::new(
        decomp <= 1e-12 && ssim_err <= 1e-6 && fd_err <= 1e-4,
        format!("decomposition {decomp:.1e}, ssim vs brute force {ssim_err:.1e}, gradient FD {fd_err:.1e}"),
    )
}

fn densify_presets() -> Outcome {
    let mut bad = Vec::new();
    let rows = [
        ("3dls", [0.0002, 0.05, 0.006, 0.15, 0.4, 0.025]),
        ("3dgs", [0.0002, 0.05, 0.01, 0.15, 0.1, 0.005]),
    ];
    for (name, want) in rows {
        let t = DensifyThresholds::preset(name).unwrap();
        let got = [t.grad_threshold, t.grow_scale2d, t.grow_scale3d, t.prune_scale2d, t.prune_scale3d, t.prune_opacity];
        if got != want {
            bad.push(format!("preset {name} = {got:?}"));
        }
    }

    let extent = 1.0;
    let sched = DensifySchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let prim = |scale: f64, opacity: f64| {
        let mut p = Primitive3D::isotropic(Vector3::zeros(), scale, 0.5, Vector3::repeat(0.5), 0);
        p.opacity_logit = logit(opacity);
        p
    };
    let mut run = |p: Primitive3D, grad: f64, th: &DensifyThresholds| {
        let mut prims = vec![p];
        let mut stats = DensifyStats::new(1);
        stats.record(0, grad, 0.01);
        let out = densify_and_prune(&mut prims, &mut stats, th, &sched, sched.start_iter, extent, &mut rng).unwrap();
        (prims, out.report)
    };

    let (prims, rep) = run(prim(0.02 * extent, 0.5), 0.0003, &DensifyThresholds::LINEAR);
    if !(rep.splits == 1 && rep.clones == 0 && prims.len() == 2) {
        bad.push(format!("split example: {rep:?}"));
    }
    let (prims, _) = run(prim(0.003, 0.01), 0.0, &DensifyThresholds::LINEAR);
    if !prims.is_empty() {
        bad.push("opacity 0.01 survived 3dls".into());
    }
    let (prims, _) = run(prim(0.003, 0.01), 0.0, &DensifyThresholds::GAUSSIAN);
    if prims.len() != 1 {
        bad.push("opacity 0.01 pruned under 3dgs".into());
    }
    let p = prim(0.003, 0.5);
    let (prims, rep) = run(p.clone(), 0.0001, &DensifyThresholds::LINEAR);
    if prims != vec![p] || rep.clones + rep.splits + rep.prunes != 0 {
        bad.push(format!("untouched example: {rep:?}"));
    }
    Outcome::new(bad.is_empty(), summary(&bad))
}

fn fit_pattern(pattern: &str, kernel: &str, ags: Ags, budget: usize, iterations: usize) -> Fit2dResult {
    let target = generate_pattern(pattern, 128).unwrap();
    let cfg = TrainConfig {
        kernel: KernelConfig::named(kernel),
        ags,
        budget,
        iterations,
        snapshot_every: 0,
        ..TrainConfig::default()
    };
    fit2d(&target, &cfg, &mut RunLog::disabled()).unwrap()
}

fn ply_bytes(prims: &[Primitive3D]) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("final.ply");
    save_ply(&path, prims).unwrap();
    std::fs::read(path).unwrap()
}

fn fit2d_ply(fit: &Fit2dResult) -> Vec<u8> {
    let prims: Vec<Primitive3D> = fit.prims.iter().map(|p| p.to_primitive3d()).collect();
    ply_bytes(&prims)
}

fn stripes_ordinal() -> Outcome {
    let linear = fit_pattern("stripes8", "linear", Ags::ON, 2000, 2000);
    let gaussian = fit_pattern("stripes8", "gaussian", Ags::OFF, 2000, 2000);
    Outcome::new(
        linear.psnr >= gaussian.psnr && linear.psnr > 20.0 && gaussian.psnr > 20.0,
        format!("linear {:.2} dB, gaussian {:.2} dB", linear.psnr, gaussian.psnr),
    )
}

fn smooth_sanity(plys: &mut Vec<Vec<u8>>) -> Outcome {
    let linear = fit_pattern("radial", "linear", Ags::ON, 500, 1000);
    let gaussian = fit_pattern("radial", "gaussian", Ags::OFF, 500, 1000);
    plys.push(fit2d_ply(&linear));
    Outcome::new(
        linear.psnr > 25.0 && gaussian.psnr > 25.0,
        format!("linear {:.2} dB, gaussian {:.2} dB", linear.psnr, gaussian.psnr),
    )
}

fn fixture_config() -> TrainConfig {
    TrainConfig {
        kernel: KernelConfig::named("linear"),
        iterations: 2000,
        snapshot_every: 0,
        sh_degree: 0,
        ..TrainConfig::default()
    }
}

fn fixture_refit(plys: &mut Vec<Vec<u8>>) -> Outcome {
    let cfg = fixture_config();
    let spec = cfg.kernel.resolve().unwrap();
    let fx = synthetic_fixture(&FixtureSpec::default(), &spec, &cfg.render).unwrap();
    let fit = fit3d(&fx.data, &cfg, &mut TrainSink::quiet()).unwrap();
    plys.push(ply_bytes(&fit.prims));
    Outcome::new(
        fit.test_psnr > 30.0,
        format!("held-out cameras {:?}: {:.2} dB, {} primitives", fit.test_cameras, fit.test_psnr, fit.prims.len()),
    )
}

fn efficiency() -> Outcome {
    let kernels = [KernelSpec::named("gaussian").unwrap(), KernelSpec::named("linear").unwrap()];
    let rows = run_bench(&BenchConfig::default(), &kernels).unwrap();
    let ratio = rows[1].forward_ms / rows[0].forward_ms;
    Outcome::new(
        ratio <= 1.05,
        format!(
            "100k splats: gaussian {:.1} ms, linear {:.1} ms forward (ratio {ratio:.3})",
            rows[0].forward_ms, rows[1].forward_ms
        ),
    )
}

fn reproducibility(plys: &[Vec<u8>]) -> Outcome {
    if plys.len() < 2 {
        return Outcome::new(false, "criteria 9 and 10 must run first");
    }
    let again_2d = fit2d_ply(&fit_pattern("radial", "linear", Ags::ON, 500, 1000));
    let cfg = fixture_config();
    let spec = cfg.kernel.resolve().unwrap();
    let fx = synthetic_fixture(&FixtureSpec::default(), &spec, &cfg.render).unwrap();
    let again_3d = ply_bytes(&fit3d(&fx.data, &cfg, &mut TrainSink::quiet()).unwrap().prims);
    let same_2d = again_2d == plys[0];
    let same_3d = again_3d == plys[1];
    Outcome::new(same_2d && same_3d, format!("fit2d identical: {same_2d}, fit3d identical: {same_3d}"))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wants = |n: usize| selected.is_empty() || selected.contains(&n);
    let mut plys = Vec::new();
    let mut failures = 0;
    let secs = Duration::from_secs;
    let mut report = |n: usize, label: &str, budget: Duration, f: &mut dyn FnMut() -> Outcome| {
        if !wants(n) {
            return;
        }
        let start = Instant::now();
        let o = within_budget(f(), start.elapsed(), budget);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("[{verdict}] {n:>2}. {label}: {} ({:.1}s)", o.detail, start.elapsed().as_secs_f64());
        if !o.pass {
            failures += 1;
        }
    };
    report(1, "kernel suite", secs(10), &mut kernel_suite);
    report(2, "alignment integral", secs(1), &mut alignment_ratio);
    report(3, "blend conservation", secs(30), &mut blend_conservation);
    report(4, "gradient finite differences", secs(120), &mut gradient_acceptance);
    report(5, "AGS contract", secs(10), &mut ags_contract);
    report(6, "loss suite", secs(60), &mut loss_suite);
    report(7, "densify presets", secs(5), &mut densify_presets);
    report(8, "stripes8 linear vs gaussian", secs(900), &mut stripes_ordinal);
    report(9, "radial gradient sanity", secs(600), &mut || smooth_sanity(&mut plys));
    report(10, "3D fixture re-fit", secs(1200), &mut || fixture_refit(&mut plys));
    report(11, "forward efficiency", secs(600), &mut efficiency);
    report(12, "bit-identical PLY", secs(1800), &mut || reproducibility(&plys));
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
