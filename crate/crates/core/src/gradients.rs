//! Analytic backward pass through blending, kernel, projection and
//! covariance construction, with adaptive gradient scaling (AGS).

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    projection_jacobian, quat_matrix_grad, quat_to_matrix, Camera, Primitive3D, ProjectedScene,
    Splat2D, COV2D_FLOOR,
};
use crate::image_buf::Image;
use crate::kernel::{ags_weight_sq, KernelSpec};
use crate::raster::{prepare, sample, ExecMode, Precision, Real, RenderOutput, RenderSettings};
use crate::sh;

/// Which gradient paths AGS rescales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgsScope {
    /// Only gradients that flow through the kernel value (mean and shape).
    #[default]
    KernelPath,
    /// Kernel, opacity and color paths alike.
    AllPaths,
}

/// Distance fed to the AGS weight `exp(−D²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgsDistance {
    /// Mahalanobis distance after division by the kernel's λ, the same
    /// `u = D/λ` the kernel is evaluated at.
    #[default]
    Aligned,
    /// Raw Mahalanobis distance of the splat covariance.
    Raw,
}

impl AgsDistance {
    /// Squared AGS distance from the raw squared Mahalanobis distance.
    pub fn squared(self, q: f64, lambda: f64) -> f64 {
        match self {
            AgsDistance::Aligned => q / (lambda * lambda),
            AgsDistance::Raw => q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ags {
    pub enabled: bool,
    #[serde(default)]
    pub scope: AgsScope,
    #[serde(default)]
    pub distance: AgsDistance,
}

impl Ags {
    pub const OFF: Ags = Ags {
        enabled: false,
        scope: AgsScope::KernelPath,
        distance: AgsDistance::Aligned,
    };
    pub const ON: Ags = Ags {
        enabled: true,
        scope: AgsScope::KernelPath,
        distance: AgsDistance::Aligned,
    };
}

/// Loss gradients with respect to one screen-space splat.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatGrads {
    pub d_mean2d: Vector2<f64>,
    /// Gradient on the full 2×2 conic (symmetric).
    pub d_conic: Matrix2<f64>,
    /// Gradient on the clamped, view-evaluated color.
    pub d_color: Vector3<f64>,
    pub d_opacity: f64,
}

impl SplatGrads {
    fn add(&mut self, o: &SplatGrads) {
        self.d_mean2d += o.d_mean2d;
        self.d_conic += o.d_conic;
        self.d_color += o.d_color;
        self.d_opacity += o.d_opacity;
    }

    pub fn is_finite(&self) -> bool {
        self.d_mean2d.iter().all(|v| v.is_finite())
            && self.d_conic.iter().all(|v| v.is_finite())
            && self.d_color.iter().all(|v| v.is_finite())
            && self.d_opacity.is_finite()
    }
}

/// Kernel-path contribution of one pixel to one splat, recorded when tracing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelTrace {
    pub x: usize,
    pub y: usize,
    pub splat: usize,
    /// Squared Mahalanobis distance of the pixel center.
    pub q: f64,
    pub ags_weight: f64,
    /// Contribution before AGS scaling.
    pub unscaled_mean2d: Vector2<f64>,
    pub unscaled_conic: Matrix2<f64>,
    /// Contribution actually accumulated.
    pub mean2d: Vector2<f64>,
    pub conic: Matrix2<f64>,
}

struct TileGrads {
    grads: Vec<SplatGrads>,
    trace: Vec<PixelTrace>,
}

#[allow(clippy::too_many_arguments)]
fn backward_tile<T: Real>(
    tile: usize,
    output: &RenderOutput,
    d_image: &Image,
    prepared: &[crate::raster::PreparedSplat<T>],
    spec: &KernelSpec,
    settings: &RenderSettings,
    ags: Ags,
    trace: bool,
) -> TileGrads {
    let bins = &output.bins;
    let width = output.width();
    let (x0, x1, y0, y1) = bins.tile_rect(tile, width, output.height());
    let list = &bins.lists[tile];
    let mut grads = vec![SplatGrads::default(); list.len()];
    let mut traces = Vec::new();
    let alpha_min = T::from_f64(settings.alpha_min);
    let lambda = spec.lambda();
    let alpha_max = T::from_f64(settings.alpha_max);
    let bg = settings.background.map(T::from_f64);
    for y in y0..y1 {
        for x in x0..x1 {
            let i = y * width + x;
            let last = output.last_contributor[i] as usize;
            if last == 0 {
                continue;
            }
            let dc = [
                T::from_f64(d_image.data()[3 * i]),
                T::from_f64(d_image.data()[3 * i + 1]),
                T::from_f64(d_image.data()[3 * i + 2]),
            ];
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let mut t_after = T::from_f64(output.final_transmittance[i]);
            let mut behind = [t_after * bg[0], t_after * bg[1], t_after * bg[2]];
            for k in (0..last).rev() {
                let si = list[k] as usize;
                let s = &prepared[si];
                let Some(smp) = sample(s, px, py, spec, alpha_min, alpha_max) else {
                    continue;
                };
                let one_minus = T::ONE - smp.alpha;
                let t_before = t_after / one_minus;
                let w = smp.alpha * t_before;
                let mut d_alpha = T::ZERO;
                for ch in 0..3 {
                    d_alpha += dc[ch] * (s.color[ch] * t_before - behind[ch] / one_minus);
                }
                for ch in 0..3 {
                    behind[ch] += s.color[ch] * w;
                }
                t_after = t_before;

                let g = &mut grads[k];
                let omega = if ags.enabled {
                    ags_weight_sq(ags.distance.squared(smp.q.to_f64(), lambda))
                } else {
                    1.0
                };
                let side_scale = if ags.enabled && ags.scope == AgsScope::AllPaths {
                    omega
                } else {
                    1.0
                };
                let d_color = Vector3::new(
                    (dc[0] * w).to_f64(),
                    (dc[1] * w).to_f64(),
                    (dc[2] * w).to_f64(),
                );
                g.d_color += d_color * side_scale;
                if smp.clamped {
                    continue;
                }
                g.d_opacity += (d_alpha * smp.kernel).to_f64() * side_scale;

                let d_kernel = d_alpha * s.opacity;
                let d_q = d_kernel * T::from_f64(spec.slope_sq(smp.q.to_f64().max(0.0)));
                let two = T::from_f64(2.0);
                let unscaled_mean2d = Vector2::new(
                    (-(two * d_q) * (s.a * smp.dx + s.b * smp.dy)).to_f64(),
                    (-(two * d_q) * (s.b * smp.dx + s.c * smp.dy)).to_f64(),
                );
                let off = (d_q * smp.dx * smp.dy).to_f64();
                let unscaled_conic = Matrix2::new(
                    (d_q * smp.dx * smp.dx).to_f64(),
                    off,
                    off,
                    (d_q * smp.dy * smp.dy).to_f64(),
                );
                let (mean2d, conic) = if ags.enabled {
                    (unscaled_mean2d * omega, unscaled_conic * omega)
                } else {
                    (unscaled_mean2d, unscaled_conic)
                };
                g.d_mean2d += mean2d;
                g.d_conic += conic;
                if trace {
                    traces.push(PixelTrace {
                        x,
                        y,
                        splat: si,
                        q: smp.q.to_f64(),
                        ags_weight: omega,
                        unscaled_mean2d,
                        unscaled_conic,
                        mean2d,
                        conic,
                    });
                }
            }
        }
    }
    TileGrads {
        grads,
        trace: traces,
    }
}

fn backward_with<T: Real>(
    output: &RenderOutput,
    d_image: &Image,
    splats: &[Splat2D],
    spec: &KernelSpec,
    settings: &RenderSettings,
    ags: Ags,
    trace: bool,
) -> (Vec<SplatGrads>, Vec<PixelTrace>) {
    let prepared = prepare::<T>(splats, spec);
    let n_tiles = output.bins.lists.len();
    let run = |t: usize| backward_tile(t, output, d_image, &prepared, spec, settings, ags, trace);
    let tiles: Vec<TileGrads> = match settings.mode {
        ExecMode::Deterministic => (0..n_tiles).map(run).collect(),
        ExecMode::Parallel => (0..n_tiles).into_par_iter().map(run).collect(),
    };
    // fixed reduction order: tile index, then list position
    let mut grads = vec![SplatGrads::default(); splats.len()];
    let mut traces = Vec::new();
    for (tile, tg) in tiles.into_iter().enumerate() {
        for (k, g) in tg.grads.iter().enumerate() {
            grads[output.bins.lists[tile][k] as usize].add(g);
        }
        traces.extend(tg.trace);
    }
    (grads, traces)
}

fn check_backward_inputs(output: &RenderOutput, d_image: &Image, splats: &[Splat2D]) -> Result<()> {
    output.image.check_same_shape(d_image)?;
    if !d_image.is_finite() {
        return Err(Error::domain("non-finite image gradient"));
    }
    let n = output.image.pixel_count();
    if output.final_transmittance.len() != n || output.last_contributor.len() != n {
        return Err(Error::config("render buffers do not match the image size"));
    }
    if let Some(max) = output.bins.lists.iter().flatten().max() {
        if *max as usize >= splats.len() {
            return Err(Error::config("render output refers to more splats than supplied"));
        }
    }
    Ok(())
}

/// Gradients of the loss with respect to every splat, given `d_image = ∂L/∂image`.
pub fn backward_splats(
    output: &RenderOutput,
    d_image: &Image,
    splats: &[Splat2D],
    spec: &KernelSpec,
    settings: &RenderSettings,
    ags: Ags,
) -> Result<Vec<SplatGrads>> {
    check_backward_inputs(output, d_image, splats)?;
    Ok(match output.precision {
        Precision::F32 => backward_with::<f32>(output, d_image, splats, spec, settings, ags, false).0,
        Precision::F64 => backward_with::<f64>(output, d_image, splats, spec, settings, ags, false).0,
    })
}

/// [`backward_splats`] that also records every kernel-path pixel contribution.
pub fn backward_splats_traced(
    output: &RenderOutput,
    d_image: &Image,
    splats: &[Splat2D],
    spec: &KernelSpec,
    settings: &RenderSettings,
    ags: Ags,
) -> Result<(Vec<SplatGrads>, Vec<PixelTrace>)> {
    check_backward_inputs(output, d_image, splats)?;
    Ok(match output.precision {
        Precision::F32 => backward_with::<f32>(output, d_image, splats, spec, settings, ags, true),
        Precision::F64 => backward_with::<f64>(output, d_image, splats, spec, settings, ags, true),
    })
}

/// Loss gradients with respect to one 3D primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveGrads {
    pub d_mean: Vector3<f64>,
    pub d_log_scale: Vector3<f64>,
    /// Gradient on the raw (unnormalized) quaternion `(w, x, y, z)`.
    pub d_rotation: Vector4<f64>,
    pub d_opacity_logit: f64,
    pub d_sh: Vec<Vector3<f64>>,
}

impl PrimitiveGrads {
    pub fn zeros(sh_len: usize) -> Self {
        Self {
            d_mean: Vector3::zeros(),
            d_log_scale: Vector3::zeros(),
            d_rotation: Vector4::zeros(),
            d_opacity_logit: 0.0,
            d_sh: vec![Vector3::zeros(); sh_len],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_mean.iter().all(|v| v.is_finite())
            && self.d_log_scale.iter().all(|v| v.is_finite())
            && self.d_rotation.iter().all(|v| v.is_finite())
            && self.d_opacity_logit.is_finite()
            && self.d_sh.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = self.d_mean.abs().max();
        m = m.max(self.d_log_scale.abs().max());
        m = m.max(self.d_rotation.abs().max());
        m = m.max(self.d_opacity_logit.abs());
        for c in &self.d_sh {
            m = m.max(c.abs().max());
        }
        m
    }
}

/// Gradient of a floored, inverted 2D covariance: `∂L/∂Σ₂D` from `∂L/∂conic`.
pub fn cov2d_grad_from_conic(cov2d: &Matrix2<f64>, d_conic: &Matrix2<f64>) -> Matrix2<f64> {
    let floored = cov2d + Matrix2::identity() * COV2D_FLOOR;
    let conic = floored.try_inverse().unwrap_or_else(Matrix2::zeros);
    -(conic * d_conic * conic)
}

/// Chains splat gradients back to the parameters of the primitive that
/// produced the splat for `camera`.
pub fn primitive_backward(p: &Primitive3D, camera: &Camera, g: &SplatGrads) -> PrimitiveGrads {
    let mut out = PrimitiveGrads::zeros(p.sh.len());
    let wr = camera.rotation();
    let mean_cam = camera.to_camera(&p.mean);
    let Some(j) = projection_jacobian(camera, &mean_cam) else {
        return out;
    };
    let (x, y, z) = (mean_cam.x, mean_cam.y, mean_cam.z);
    let (fx, fy) = (camera.fx, camera.fy);

    let qn = p.rotation.norm();
    let q = p.rotation / qn;
    let r = quat_to_matrix(&q);
    let s2 = p.log_scale.map(|v| (2.0 * v).exp());
    let d = Matrix3::from_diagonal(&s2);
    let cov3 = r * d * r.transpose();
    let t = j * wr;
    let cov2 = t * cov3 * t.transpose();

    let d_cov2 = cov2d_grad_from_conic(&cov2, &g.d_conic);
    let d_cov3 = t.transpose() * d_cov2 * t;
    let d_t = 2.0 * d_cov2 * t * cov3;
    let d_j = d_t * wr.transpose();

    let z2 = z * z;
    let z3 = z2 * z;
    let (gu, gv) = (g.d_mean2d.x, g.d_mean2d.y);
    let mut d_mc = Vector3::new(
        fx / z * gu,
        fy / z * gv,
        -fx * x / z2 * gu - fy * y / z2 * gv,
    );
    d_mc.x += d_j[(0, 2)] * (-fx / z2);
    d_mc.y += d_j[(1, 2)] * (-fy / z2);
    d_mc.z += d_j[(0, 0)] * (-fx / z2)
        + d_j[(0, 2)] * (2.0 * fx * x / z3)
        + d_j[(1, 1)] * (-fy / z2)
        + d_j[(1, 2)] * (2.0 * fy * y / z3);
    out.d_mean = wr.transpose() * d_mc;

    // view-dependent color
    let v = p.mean - camera.center();
    let vn = v.norm();
    let dir = if vn > 0.0 { v / vn } else { Vector3::z() };
    let raw = sh::eval_unclamped(&p.sh, &dir);
    let mut d_raw = g.d_color;
    for ch in 0..3 {
        if !(0.0..=1.0).contains(&raw[ch]) {
            d_raw[ch] = 0.0;
        }
    }
    let n = p.sh.len().min(16);
    let basis = sh::basis(&dir, n);
    for k in 0..n {
        out.d_sh[k] = d_raw * basis[k];
    }
    if n > 1 && vn > 0.0 {
        let bg = sh::basis_grad(&dir, n);
        let mut d_dir = Vector3::zeros();
        for k in 1..n {
            d_dir += bg[k] * p.sh[k].dot(&d_raw);
        }
        out.d_mean += (d_dir - dir * dir.dot(&d_dir)) / vn;
    }

    let m = r.transpose() * d_cov3 * r;
    out.d_log_scale = Vector3::new(2.0 * s2.x * m[(0, 0)], 2.0 * s2.y * m[(1, 1)], 2.0 * s2.z * m[(2, 2)]);
    let d_r = 2.0 * d_cov3 * r * d;
    let dq_hat = quat_matrix_grad(&q, &d_r);
    out.d_rotation = (dq_hat - q * q.dot(&dq_hat)) / qn;

    let o = p.opacity();
    out.d_opacity_logit = g.d_opacity * o * (1.0 - o);
    out
}

/// Per-primitive gradients for a full scene; primitives not visible in the
/// view get zeros.
pub fn scene_backward(
    prims: &[Primitive3D],
    projected: &ProjectedScene,
    splat_grads: &[SplatGrads],
    camera: &Camera,
) -> Vec<PrimitiveGrads> {
    let mut out: Vec<PrimitiveGrads> = prims.iter().map(|p| PrimitiveGrads::zeros(p.sh.len())).collect();
    for (k, &src) in projected.source.iter().enumerate() {
        out[src] = primitive_backward(&prims[src], camera, &splat_grads[k]);
    }
    out
}

/// Norm of a screen-space mean gradient in normalized device units
/// (pixel gradient scaled by half the image extent per axis).
pub fn ndc_grad_norm(d_mean2d: &Vector2<f64>, width: usize, height: usize) -> f64 {
    Vector2::new(d_mean2d.x * width as f64 * 0.5, d_mean2d.y * height as f64 * 0.5).norm()
}

/// Outcome of an AGS multiplicativity check.
#[derive(Debug, Clone, PartialEq)]
pub struct AgsReport {
    pub pixels: Vec<AgsPixel>,
    /// Every contributing pixel satisfied `on == off · exp(−D²)` bit for bit.
    pub exact: bool,
    /// Largest deviation of the recorded weight from `exp(−D²)` with D
    /// recomputed from the splat geometry.
    pub max_weight_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgsPixel {
    pub x: usize,
    pub y: usize,
    pub distance: f64,
    pub weight: f64,
    pub off: Vector2<f64>,
    pub on: Vector2<f64>,
}

impl AgsReport {
    /// Ratio `on / off` of the mean-gradient contribution at a pixel, if
    /// that pixel contributed and the AGS-off value is non-zero.
    pub fn ratio_at(&self, x: usize, y: usize) -> Option<f64> {
        let p = self.pixels.iter().find(|p| p.x == x && p.y == y)?;
        let k = if p.off.x.abs() >= p.off.y.abs() { 0 } else { 1 };
        if p.off[k] == 0.0 {
            None
        } else {
            Some(p.on[k] / p.off[k])
        }
    }
}

/// Renders a single splat in float64, runs the backward pass with the
/// given AGS setting and with AGS off, and compares the kernel-path
/// contribution of every pixel.
pub fn verify_ags_contract(
    splat: &Splat2D,
    spec: &KernelSpec,
    width: usize,
    height: usize,
    d_image: &Image,
    ags: Ags,
) -> Result<AgsReport> {
    if !ags.enabled || ags.scope != AgsScope::KernelPath {
        return Err(Error::config("the AGS contract check needs AGS on with kernel-path scope"));
    }
    let settings = RenderSettings {
        precision: Precision::F64,
        mode: ExecMode::Deterministic,
        ..RenderSettings::default()
    };
    let splats = std::slice::from_ref(splat);
    let out = crate::raster::rasterize(splats, spec, &settings, width, height)?;
    let (_, off) = backward_splats_traced(&out, d_image, splats, spec, &settings, Ags::OFF)?;
    let (_, on) = backward_splats_traced(&out, d_image, splats, spec, &settings, ags)?;
    if on.len() != off.len() {
        return Err(Error::Internal("AGS changed the set of contributing pixels".into()));
    }
    let mut exact = true;
    let mut max_weight_error: f64 = 0.0;
    let mut pixels = Vec::with_capacity(on.len());
    for (a, b) in off.iter().zip(&on) {
        if (a.x, a.y) != (b.x, b.y) {
            return Err(Error::Internal("trace order differs between AGS runs".into()));
        }
        let px = Vector2::new(a.x as f64 + 0.5, a.y as f64 + 0.5);
        let raw = crate::geometry::mahalanobis_2d(&splat.conic, &px, &splat.mean2d);
        let dist = ags.distance.squared(raw * raw, spec.lambda()).sqrt();
        let w = (-dist * dist).exp();
        max_weight_error = max_weight_error.max((w - b.ags_weight).abs() / w.max(f64::MIN_POSITIVE));
        let scaled_mean = a.unscaled_mean2d * b.ags_weight;
        let scaled_conic = a.unscaled_conic * b.ags_weight;
        exact &= scaled_mean == b.mean2d && scaled_conic == b.conic;
        exact &= a.unscaled_mean2d == b.unscaled_mean2d && a.mean2d == a.unscaled_mean2d;
        pixels.push(AgsPixel {
            x: a.x,
            y: a.y,
            distance: dist,
            weight: b.ags_weight,
            off: a.mean2d,
            on: b.mean2d,
        });
    }
    Ok(AgsReport {
        pixels,
        exact,
        max_weight_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::rasterize;

    fn f64_settings() -> RenderSettings {
        RenderSettings {
            precision: Precision::F64,
            ..Default::default()
        }
    }

    fn center_splat(opacity: f64, color: [f64; 3]) -> Splat2D {
        Splat2D {
            mean2d: Vector2::new(4.5, 4.5),
            conic: Matrix2::identity() * 0.25,
            depth: 1.0,
            radius_px: 5.0,
            color: Vector3::from(color),
            opacity,
        }
    }

    #[test]
    fn zero_image_gradient_gives_zero() {
        let spec = KernelSpec::named("linear").unwrap();
        let s = center_splat(0.6, [0.3, 0.5, 0.9]);
        let out = rasterize(&[s.clone()], &spec, &f64_settings(), 16, 16).unwrap();
        let d = Image::new(16, 16);
        let g = backward_splats(&out, &d, &[s], &spec, &f64_settings(), Ags::ON).unwrap();
        assert_eq!(g[0], SplatGrads::default());
    }

    #[test]
    fn single_center_pixel_gradients() {
        // L = red channel of pixel (4, 4); alpha = o at the center
        let spec = KernelSpec::named("linear").unwrap();
        let o = 0.6;
        let s = center_splat(o, [0.3, 0.5, 0.9]);
        let out = rasterize(&[s.clone()], &spec, &f64_settings(), 16, 16).unwrap();
        let mut d = Image::new(16, 16);
        d.set(4, 4, [1.0, 0.0, 0.0]);
        let g = backward_splats(&out, &d, &[s], &spec, &f64_settings(), Ags::OFF).unwrap();
        assert!((g[0].d_opacity - 0.3).abs() < 1e-15);
        assert!((g[0].d_color.x - o).abs() < 1e-15);
        assert_eq!(g[0].d_mean2d, Vector2::zeros());
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let spec = KernelSpec::named("linear").unwrap();
        let out = rasterize(&[], &spec, &f64_settings(), 16, 16).unwrap();
        let d = Image::new(8, 16);
        assert!(matches!(
            backward_splats(&out, &d, &[], &spec, &f64_settings(), Ags::OFF),
            Err(Error::Config(_))
        ));
        let d = Image::filled(16, 16, [f64::NAN, 0.0, 0.0]);
        assert!(matches!(
            backward_splats(&out, &d, &[], &spec, &f64_settings(), Ags::OFF),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ags_contract_examples() {
        let spec = KernelSpec::named("linear").unwrap();
        // conic = I, so D equals the pixel offset in pixels
        let s = Splat2D {
            mean2d: Vector2::new(8.0, 8.5),
            conic: Matrix2::identity(),
            depth: 1.0,
            radius_px: 2.5,
            color: Vector3::new(0.9, 0.2, 0.4),
            opacity: 0.7,
        };
        let d = Image::filled(16, 16, [1.0, -0.5, 0.25]);
        let raw = Ags {
            distance: AgsDistance::Raw,
            ..Ags::ON
        };
        let report = verify_ags_contract(&s, &spec, 16, 16, &d, raw).unwrap();
        assert!(report.exact);
        assert!(report.max_weight_error < 1e-12);
        // pixel (9, 8) has center (9.5, 8.5), one and a half pixels from the mean
        let r = report.ratio_at(9, 8).unwrap();
        assert!((r - (-(1.5f64 * 1.5)).exp()).abs() < 1e-14);
        assert!(report.pixels.iter().all(|p| p.distance <= 2.5));
        assert!(report.ratio_at(12, 8).is_none());

        let report = verify_ags_contract(&s, &spec, 16, 16, &d, Ags::ON).unwrap();
        assert!(report.exact);
        assert!(report.max_weight_error < 1e-12);
        let r = report.ratio_at(9, 8).unwrap();
        assert!((r - (-(0.6f64 * 0.6)).exp()).abs() < 1e-14);
        assert!(report.pixels.iter().all(|p| p.distance <= 1.0));

        assert!(verify_ags_contract(&s, &spec, 16, 16, &d, Ags::OFF).is_err());
    }
}
