//! Finite-difference verification of the analytic backward pass.
//!
//! The reference derivative only ever calls the forward renderer: each
//! parameter is nudged by ±h and the scalar loss `Σ w ⊙ image` is
//! re-evaluated.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::geometry::{project_scene, Camera, Primitive3D};
use crate::gradients::{backward_splats, scene_backward, Ags, PrimitiveGrads};
use crate::image_buf::Image;
use crate::kernel::KernelSpec;
use crate::raster::{rasterize, ExecMode, Precision, RenderSettings};
use crate::sh;

/// Parameter groups reported separately.
pub const GROUPS: [&str; 5] = ["mean", "log_scale", "rotation", "opacity", "sh"];

#[derive(Debug, Clone)]
pub struct GradCheckScene {
    pub prims: Vec<Primitive3D>,
    pub camera: Camera,
    /// Loss weights; the loss is `Σ weights ⊙ image`.
    pub weights: Image,
}

const MIN_DEPTH_GAP: f64 = 0.01;

/// Random scene of `n` primitives in front of a `size × size` camera.
pub fn random_scene(seed: u64, n: usize, size: usize, sh_degree: usize) -> GradCheckScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let camera = Camera::look_at(
        Vector3::new(0.0, 0.0, -4.0),
        Vector3::zeros(),
        Vector3::new(0.0, -1.0, 0.0),
        size as f64 * 1.2,
        size,
        size,
    );
    // Depths are kept apart so a ±h nudge of a mean never reorders the sort.
    let mut depths: Vec<f64> = Vec::with_capacity(n);
    while depths.len() < n {
        let z: f64 = rng.random_range(-1.0..1.0);
        if depths.iter().all(|d| (d - z).abs() > MIN_DEPTH_GAP) {
            depths.push(z);
        }
    }
    let prims = depths
        .into_iter()
        .map(|z| {
            let mean = Vector3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), z);
            let log_scale = Vector3::new(
                rng.random_range(-1.7f64..-0.9),
                rng.random_range(-1.7f64..-0.9),
                rng.random_range(-1.7f64..-0.9),
            );
            let rotation = Vector4::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let rotation = if rotation.norm() < 0.1 {
                Vector4::new(1.0, 0.0, 0.0, 0.0)
            } else {
                rotation.normalize()
            };
            let opacity: f64 = rng.random_range(0.2..0.9);
            let mut shc = vec![Vector3::zeros(); sh::num_coeffs(sh_degree)];
            shc[0] = sh::rgb_to_dc(Vector3::new(
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
                rng.random_range(0.2..0.8),
            ));
            for c in shc.iter_mut().skip(1) {
                *c = Vector3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                );
            }
            Primitive3D {
                mean,
                log_scale,
                rotation,
                opacity_logit: crate::geometry::logit(opacity),
                sh: shc,
            }
        })
        .collect();
    let weights = Image::from_fn(size, size, |_, _| {
        [
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ]
    });
    GradCheckScene {
        prims,
        camera,
        weights,
    }
}

/// Float64 settings with the alpha skip and transmittance early-out pushed
/// out of reach, so the rendered image is continuous in every parameter.
pub fn reference_settings() -> RenderSettings {
    RenderSettings {
        alpha_min: 1e-12,
        transmittance_floor: 1e-12,
        precision: Precision::F64,
        mode: ExecMode::Deterministic,
        ..RenderSettings::default()
    }
}

fn weighted_loss(prims: &[Primitive3D], scene: &GradCheckScene, spec: &KernelSpec, settings: &RenderSettings) -> Result<f64> {
    let cam = &scene.camera;
    let proj = project_scene(prims, cam, spec)?;
    let out = rasterize(&proj.splats, spec, settings, cam.width, cam.height)?;
    Ok(out
        .image
        .data()
        .iter()
        .zip(scene.weights.data())
        .map(|(a, b)| a * b)
        .sum())
}

/// Analytic gradients of `Σ weights ⊙ image`.
pub fn analytic_grads(scene: &GradCheckScene, spec: &KernelSpec, settings: &RenderSettings, ags: Ags) -> Result<Vec<PrimitiveGrads>> {
    let cam = &scene.camera;
    let proj = project_scene(&scene.prims, cam, spec)?;
    let out = rasterize(&proj.splats, spec, settings, cam.width, cam.height)?;
    let g = backward_splats(&out, &scene.weights, &proj.splats, spec, settings, ags)?;
    Ok(scene_backward(&scene.prims, &proj, &g, cam))
}

fn param_mut(p: &mut Primitive3D, group: usize, k: usize) -> Option<&mut f64> {
    match group {
        0 => p.mean.get_mut(k),
        1 => p.log_scale.get_mut(k),
        2 => p.rotation.get_mut(k),
        3 => (k == 0).then_some(&mut p.opacity_logit),
        _ => {
            let (c, ch) = (k / 3, k % 3);
            p.sh.get_mut(c).map(|v| &mut v[ch])
        }
    }
}

fn analytic_value(g: &PrimitiveGrads, group: usize, k: usize) -> f64 {
    match group {
        0 => g.d_mean[k],
        1 => g.d_log_scale[k],
        2 => g.d_rotation[k],
        3 => g.d_opacity_logit,
        _ => g.d_sh[k / 3][k % 3],
    }
}

fn group_len(p: &Primitive3D, group: usize) -> usize {
    match group {
        0 | 1 => 3,
        2 => 4,
        3 => 1,
        _ => 3 * p.sh.len(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradComparison {
    pub primitive: usize,
    pub group: &'static str,
    pub component: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub pass: bool,
}

/// Agreement rule: relative error ≤ `rel`, or absolute error ≤ `abs` when
/// both values are below `small`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub small: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-3,
            abs: 1e-6,
            small: 1e-3,
        }
    }
}

impl Tolerance {
    pub fn accepts(&self, analytic: f64, numeric: f64) -> bool {
        let err = (analytic - numeric).abs();
        let mag = analytic.abs().max(numeric.abs());
        if mag < self.small {
            err <= self.abs || err <= self.rel * mag
        } else {
            err <= self.rel * mag
        }
    }
}

/// Central differences with step `h` for every parameter of every
/// primitive, compared against the analytic gradients.
pub fn compare(scene: &GradCheckScene, spec: &KernelSpec, h: f64, tol: Tolerance) -> Result<Vec<GradComparison>> {
    let settings = reference_settings();
    let analytic = analytic_grads(scene, spec, &settings, Ags::OFF)?;
    let mut out = Vec::new();
    let mut prims = scene.prims.clone();
    for i in 0..prims.len() {
        for (group, name) in GROUPS.iter().enumerate() {
            for k in 0..group_len(&prims[i], group) {
                let orig = *param_mut(&mut prims[i], group, k).expect("index in range");
                *param_mut(&mut prims[i], group, k).unwrap() = orig + h;
                let lp = weighted_loss(&prims, scene, spec, &settings)?;
                *param_mut(&mut prims[i], group, k).unwrap() = orig - h;
                let lm = weighted_loss(&prims, scene, spec, &settings)?;
                *param_mut(&mut prims[i], group, k).unwrap() = orig;
                let numeric = (lp - lm) / (2.0 * h);
                let a = analytic_value(&analytic[i], group, k);
                out.push(GradComparison {
                    primitive: i,
                    group: name,
                    component: k,
                    analytic: a,
                    numeric,
                    pass: tol.accepts(a, numeric),
                });
            }
        }
    }
    Ok(out)
}

/// Pass/fail tally for one parameter group.
#[derive(Debug, Clone, Serialize)]
pub struct GroupSummary {
    pub group: &'static str,
    pub checked: usize,
    pub failed: usize,
    pub max_rel_error: f64,
}

pub fn summarize(rows: &[GradComparison]) -> Vec<GroupSummary> {
    GROUPS
        .iter()
        .map(|&g| {
            let mut s = GroupSummary {
                group: g,
                checked: 0,
                failed: 0,
                max_rel_error: 0.0,
            };
            for r in rows.iter().filter(|r| r.group == g) {
                s.checked += 1;
                if !r.pass {
                    s.failed += 1;
                }
                let mag = r.analytic.abs().max(r.numeric.abs());
                if mag > 0.0 {
                    s.max_rel_error = s.max_rel_error.max((r.analytic - r.numeric).abs() / mag);
                }
            }
            s
        })
        .collect()
}
