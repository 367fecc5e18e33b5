//! Forward/backward timing on a seeded synthetic scene.

use std::time::Instant;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{logit, project_scene, Camera, Primitive3D};
use crate::gradients::{backward_splats, scene_backward, Ags};
use crate::image_buf::Image;
use crate::kernel::KernelSpec;
use crate::raster::{rasterize, RenderSettings};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    pub splats: usize,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
    /// Timed repetitions per kernel; the median is reported.
    pub repeats: usize,
    pub render: RenderSettings,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            splats: 100_000,
            width: 256,
            height: 256,
            seed: 0,
            repeats: 5,
            render: RenderSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub kernel: String,
    pub lambda: f64,
    pub splats: usize,
    pub visible: usize,
    pub forward_ms: f64,
    pub backward_ms: f64,
}

pub const CSV_HEADER: &str = "kernel,lambda,splats,visible,forward_ms,backward_ms";

impl BenchRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3}",
            self.kernel, self.lambda, self.splats, self.visible, self.forward_ms, self.backward_ms
        )
    }
}

/// Primitives scattered through a unit cube in front of a camera at
/// distance 4, with scales between 0.004 and 0.02 and random rotations.
pub fn bench_scene(cfg: &BenchConfig) -> (Vec<Primitive3D>, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prims = (0..cfg.splats)
        .map(|_| {
            let mean = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let rgb = Vector3::new(rng.random(), rng.random(), rng.random());
            let mut p = Primitive3D::isotropic(mean, 0.01, 0.5, rgb, 0);
            for k in 0..3 {
                p.log_scale[k] = rng.random_range(0.004f64..0.02).ln();
            }
            p.rotation = Vector4::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            p.normalize_rotation();
            p.opacity_logit = logit(rng.random_range(0.2..0.9));
            p
        })
        .collect();
    let camera = Camera::look_at(
        Vector3::new(0.0, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        1.8 * cfg.width.max(cfg.height) as f64,
        cfg.width,
        cfg.height,
    );
    (prims, camera)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times projection plus rasterization (forward) and the splat and
/// primitive backward passes (backward) for each kernel on the same scene.
pub fn run_bench(cfg: &BenchConfig, kernels: &[KernelSpec]) -> Result<Vec<BenchRow>> {
    if cfg.splats == 0 || cfg.repeats == 0 || cfg.width == 0 || cfg.height == 0 {
        return Err(Error::config("bench needs positive splats, repeats and image size"));
    }
    if kernels.is_empty() {
        return Err(Error::config("bench needs at least one kernel"));
    }
    cfg.render.validate()?;
    let (prims, camera) = bench_scene(cfg);
    let d_image = Image::filled(cfg.width, cfg.height, [1.0, -0.5, 0.25]);
    let mut rows = Vec::with_capacity(kernels.len());
    for spec in kernels {
        let mut fwd = Vec::with_capacity(cfg.repeats);
        let mut bwd = Vec::with_capacity(cfg.repeats);
        let mut visible = 0;
        for _ in 0..cfg.repeats {
            let t0 = Instant::now();
            let proj = project_scene(&prims, &camera, spec)?;
            let out = rasterize(&proj.splats, spec, &cfg.render, cfg.width, cfg.height)?;
            fwd.push(t0.elapsed().as_secs_f64() * 1e3);
            let t1 = Instant::now();
            let g = backward_splats(&out, &d_image, &proj.splats, spec, &cfg.render, Ags::OFF)?;
            let grads = scene_backward(&prims, &proj, &g, &camera);
            bwd.push(t1.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(grads);
            visible = proj.splats.len();
        }
        rows.push(BenchRow {
            kernel: spec.name().to_string(),
            lambda: spec.lambda(),
            splats: cfg.splats,
            visible,
            forward_ms: median(fwd),
            backward_ms: median(bwd),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_runs() {
        let cfg = BenchConfig {
            splats: 200,
            width: 32,
            height: 32,
            repeats: 1,
            ..BenchConfig::default()
        };
        let kernels = [KernelSpec::named("gaussian").unwrap(), KernelSpec::named("linear").unwrap()];
        let rows = run_bench(&cfg, &kernels).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows.iter().all(|r| r.visible > 0 && r.forward_ms >= 0.0));
        assert_eq!(bench_scene(&cfg).0, bench_scene(&cfg).0);
        assert!(run_bench(&BenchConfig { splats: 0, ..cfg }, &kernels).unwrap_err().is_config());
    }
}
