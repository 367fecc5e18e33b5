use std::path::PathBuf;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TracePoint, TrainConfig};
use crate::densify::{densify_and_prune, reset_opacity, scene_extent, DensifyReport, DensifyStats, OPACITY_RESET_CEILING};
use crate::error::{Error, Result};
use crate::geometry::{logit, project_scene, Camera, Primitive3D, NEAR_PLANE};
use crate::gradients::{backward_splats, ndc_grad_norm, scene_backward, PrimitiveGrads};
use crate::image_buf::Image;
use crate::io::{save_ply, Dataset, RunLog};
use crate::kernel::KernelSpec;
use crate::losses::{combined_loss, psnr, ssim};
use crate::optim::Adam;
use crate::raster::{rasterize, RenderSettings};
use crate::sh;

/// Where a 3D run reports to.
#[derive(Debug, Default)]
pub struct TrainSink {
    pub log: RunLog,
    /// PLY snapshots `iter_NNNNNN.ply` are written here at every trace point.
    pub snapshot_dir: Option<PathBuf>,
}

impl TrainSink {
    pub fn quiet() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct Fit3dResult {
    pub prims: Vec<Primitive3D>,
    pub trace: Vec<TracePoint>,
    pub losses: Vec<f64>,
    /// Mean PSNR / SSIM over the held-out cameras (all cameras when none
    /// are held out).
    pub test_psnr: f64,
    pub test_ssim: f64,
    pub test_cameras: Vec<usize>,
    /// Gradient steps taken from each camera.
    pub steps_per_camera: Vec<usize>,
    pub densify_reports: Vec<(usize, DensifyReport)>,
    pub scene_extent: f64,
    pub skipped_updates: u64,
}

fn nearest_color(p: &Vector3<f64>, cameras: &[Camera], images: &[Image], usable: &[usize]) -> Option<Vector3<f64>> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for &i in usable {
        let cam = &cameras[i];
        let c = cam.to_camera(p);
        if c.z <= NEAR_PLANE {
            continue;
        }
        let u = cam.fx * c.x / c.z + cam.cx;
        let v = cam.fy * c.y / c.z + cam.cy;
        if u < 0.0 || v < 0.0 || u >= cam.width as f64 || v >= cam.height as f64 {
            continue;
        }
        if best.is_none_or(|(z, _)| c.z < z) {
            best = Some((c.z, Vector3::from(images[i].get(u as usize, v as usize))));
        }
    }
    best.map(|(_, rgb)| rgb)
}

fn knn_scale(points: &[Vector3<f64>], i: usize, fallback: f64) -> f64 {
    let mut best = [f64::INFINITY; 3];
    for (j, q) in points.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = (q - points[i]).norm();
        if d < best[2] {
            best[2] = d;
            best.sort_by(|a, b| a.total_cmp(b));
        }
    }
    let found: Vec<f64> = best.iter().copied().filter(|d| d.is_finite()).collect();
    if found.is_empty() {
        return fallback;
    }
    (found.iter().sum::<f64>() / found.len() as f64).max(1e-7)
}

fn split_cameras(n: usize, holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
    if holdout_every == 0 {
        return ((0..n).collect(), Vec::new());
    }
    (0..n).partition(|i| i % holdout_every != 0)
}

/// Initial primitives: seed points (or `random_init` uniform samples in a
/// cube of half-width `extent_override`, default 1), isotropic scales from
/// the mean distance to the three nearest neighbours, opacity 0.1, base
/// color reprojected from the nearest training view that sees the point.
pub fn init_from_dataset(data: &Dataset, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<Vec<Primitive3D>> {
    data.validate()?;
    let (train, _) = split_cameras(data.cameras.len(), cfg.holdout_every);
    let positions: Vec<Vector3<f64>> = match (&data.points, data.random_init) {
        (Some(p), _) if !p.is_empty() => p.iter().map(|s| s.position).collect(),
        (_, Some(n)) => {
            let e = data.extent_override.unwrap_or(1.0);
            (0..n)
                .map(|_| Vector3::new(rng.random_range(-e..e), rng.random_range(-e..e), rng.random_range(-e..e)))
                .collect()
        }
        _ => return Err(Error::config("dataset has no seed points")),
    };
    let extent = data.extent_override.unwrap_or_else(|| scene_extent(&positions));
    let fallback = (0.01 * extent).max(1e-3);
    let n_coeffs = sh::num_coeffs(cfg.sh_degree);
    Ok(positions
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let rgb = nearest_color(p, &data.cameras, &data.images, &train).unwrap_or(Vector3::new(0.5, 0.5, 0.5));
            let mut shc = vec![Vector3::zeros(); n_coeffs];
            shc[0] = sh::rgb_to_dc(rgb);
            Primitive3D {
                mean: *p,
                log_scale: Vector3::repeat(knn_scale(&positions, i, fallback).ln()),
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                opacity_logit: logit(0.1),
                sh: shc,
            }
        })
        .collect())
}

const GROUPS: [&str; 6] = ["mean", "log_scale", "rotation", "opacity", "sh_dc", "sh_rest"];

fn pack(prims: &[Primitive3D], rest: usize) -> Vec<Vec<f64>> {
    let mut g: Vec<Vec<f64>> = (0..6).map(|_| Vec::new()).collect();
    for p in prims {
        g[0].extend(p.mean.iter());
        g[1].extend(p.log_scale.iter());
        g[2].extend(p.rotation.iter());
        g[3].push(p.opacity_logit);
        g[4].extend(p.sh[0].iter());
        for c in &p.sh[1..=rest] {
            g[5].extend(c.iter());
        }
    }
    g
}

fn unpack(prims: &mut [Primitive3D], g: &[Vec<f64>], rest: usize) {
    for (i, p) in prims.iter_mut().enumerate() {
        p.mean = Vector3::from_column_slice(&g[0][3 * i..3 * i + 3]);
        p.log_scale = Vector3::from_column_slice(&g[1][3 * i..3 * i + 3]);
        p.rotation = Vector4::from_column_slice(&g[2][4 * i..4 * i + 4]);
        p.opacity_logit = g[3][i];
        p.sh[0] = Vector3::from_column_slice(&g[4][3 * i..3 * i + 3]);
        for k in 0..rest {
            let o = 3 * (rest * i + k);
            p.sh[k + 1] = Vector3::from_column_slice(&g[5][o..o + 3]);
        }
        p.normalize_rotation();
    }
}

fn pack_grads(grads: &[PrimitiveGrads], rest: usize) -> Vec<Vec<f64>> {
    let mut g: Vec<Vec<f64>> = (0..6).map(|_| Vec::new()).collect();
    for d in grads {
        g[0].extend(d.d_mean.iter());
        g[1].extend(d.d_log_scale.iter());
        g[2].extend(d.d_rotation.iter());
        g[3].push(d.d_opacity_logit);
        g[4].extend(d.d_sh[0].iter());
        for c in &d.d_sh[1..=rest] {
            g[5].extend(c.iter());
        }
    }
    g
}

pub(crate) fn render_view(prims: &[Primitive3D], cam: &Camera, spec: &KernelSpec, settings: &RenderSettings) -> Result<Image> {
    let proj = project_scene(prims, cam, spec)?;
    Ok(rasterize(&proj.splats, spec, settings, cam.width, cam.height)?.image)
}

fn evaluate(prims: &[Primitive3D], data: &Dataset, cams: &[usize], spec: &KernelSpec, settings: &RenderSettings) -> Result<(f64, f64)> {
    let (mut p, mut s) = (0.0, 0.0);
    for &i in cams {
        let img = render_view(prims, &data.cameras[i], spec, settings)?;
        p += psnr(&img, &data.images[i])?;
        s += ssim(&img, &data.images[i])?;
    }
    let n = cams.len().max(1) as f64;
    Ok((p / n, s / n))
}

/// Multi-view fit: one training camera per step in round-robin order,
/// Adam, and density control on the configured schedule.
pub fn fit3d(data: &Dataset, cfg: &TrainConfig, sink: &mut TrainSink) -> Result<Fit3dResult> {
    cfg.validate()?;
    data.validate()?;
    let spec = cfg.kernel.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prims = init_from_dataset(data, cfg, &mut rng)?;
    let extent = data
        .extent_override
        .unwrap_or_else(|| scene_extent(&prims.iter().map(|p| p.mean).collect::<Vec<_>>()))
        .max(1e-6);
    let (train, test) = split_cameras(data.cameras.len(), cfg.holdout_every);
    if train.is_empty() {
        return Err(Error::config("no training cameras left after holdout"));
    }
    let eval_cams = if test.is_empty() { train.clone() } else { test.clone() };
    let rest = sh::num_coeffs(cfg.sh_degree) - 1;
    let lr = &cfg.lr;
    let mean_lr = lr.mean_schedule(extent, cfg.iterations);
    let mut adam = Adam::new(
        &[
            (GROUPS[0], mean_lr.at(0), 3),
            (GROUPS[1], lr.log_scale, 3),
            (GROUPS[2], lr.rotation, 4),
            (GROUPS[3], lr.opacity, 1),
            (GROUPS[4], lr.sh_dc, 3),
            (GROUPS[5], lr.sh_dc / lr.sh_rest_divisor, 3 * rest),
        ],
        prims.len(),
    );
    let densify = &cfg.densify;
    let mut stats = DensifyStats::new(prims.len());
    let mut steps_per_camera = vec![0usize; data.cameras.len()];
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut trace = Vec::new();
    let mut reports = Vec::new();
    if let Some(dir) = &sink.snapshot_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for iter in 1..=cfg.iterations {
        let ci = train[(iter - 1) % train.len()];
        let cam = &data.cameras[ci];
        let target = &data.images[ci];
        let proj = project_scene(&prims, cam, &spec)?;
        let out = rasterize(&proj.splats, &spec, &cfg.render, cam.width, cam.height)?;
        let (loss, d_image) = combined_loss(&out.image, target, &cfg.loss)?;
        losses.push(loss);
        let g = backward_splats(&out, &d_image, &proj.splats, &spec, &cfg.render, cfg.ags)?;
        let grads = scene_backward(&prims, &proj, &g, cam);
        steps_per_camera[ci] += 1;
        if densify.enabled && iter < densify.schedule.stop_iter {
            let max_dim = cam.width.max(cam.height) as f64;
            for (k, &src) in proj.source.iter().enumerate() {
                stats.record(src, ndc_grad_norm(&g[k].d_mean2d, cam.width, cam.height), proj.splats[k].radius_px / max_dim);
            }
        }
        adam.set_lr(GROUPS[0], mean_lr.at(iter - 1));
        let mut params = pack(&prims, rest);
        adam.step(&mut params, &pack_grads(&grads, rest))?;
        unpack(&mut prims, &params, rest);

        if densify.enabled {
            if densify.schedule.densify_at(iter) {
                let outcome = densify_and_prune(
                    &mut prims,
                    &mut stats,
                    &densify.thresholds,
                    &densify.schedule,
                    iter,
                    extent,
                    &mut rng,
                )?;
                adam.remap(&outcome.sources);
                sink.log.event("densify", &serde_json::json!({"iter": iter, "report": outcome.report}))?;
                reports.push((iter, outcome.report));
            }
            if densify.schedule.reset_opacity_at(iter) {
                reset_opacity(&mut prims, OPACITY_RESET_CEILING);
                sink.log.event("opacity_reset", &serde_json::json!({"iter": iter}))?;
            }
        }
        if cfg.snapshot_every > 0 && (iter % cfg.snapshot_every == 0 || iter == cfg.iterations) {
            let (p, s) = evaluate(&prims, data, &eval_cams, &spec, &cfg.render)?;
            let point = TracePoint {
                iter,
                loss,
                psnr: p,
                ssim: s,
                splats: prims.len(),
            };
            sink.log.event("step", &point)?;
            trace.push(point);
            if let Some(dir) = &sink.snapshot_dir {
                save_ply(&dir.join(format!("iter_{iter:06}.ply")), &prims)?;
            }
        }
    }
    let (test_psnr, test_ssim) = evaluate(&prims, data, &eval_cams, &spec, &cfg.render)?;
    sink.log.event(
        "final",
        &serde_json::json!({"test_psnr": test_psnr, "test_ssim": test_ssim, "splats": prims.len(), "skipped_updates": adam.skipped()}),
    )?;
    sink.log.flush()?;
    Ok(Fit3dResult {
        prims,
        trace,
        losses,
        test_psnr,
        test_ssim,
        test_cameras: test,
        steps_per_camera,
        densify_reports: reports,
        scene_extent: extent,
        skipped_updates: adam.skipped(),
    })
}
