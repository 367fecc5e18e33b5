use nalgebra::{Matrix2, Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{TracePoint, TrainConfig};
use crate::error::{Error, Result};
use crate::geometry::{logit, sigmoid, splat_from_cov2d, Primitive3D, Splat2D};
use crate::gradients::{backward_splats, cov2d_grad_from_conic, SplatGrads};
use crate::image_buf::Image;
use crate::io::RunLog;
use crate::kernel::KernelSpec;
use crate::losses::{combined_loss, psnr, ssim};
use crate::optim::Adam;
use crate::raster::{rasterize, RenderSettings};
use crate::sh;

/// A splat that lives directly in image space.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive2D {
    pub mean2d: Vector2<f64>,
    pub log_scale2d: Vector2<f64>,
    pub rotation_angle: f64,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prim2DGrads {
    pub d_mean2d: Vector2<f64>,
    pub d_log_scale2d: Vector2<f64>,
    pub d_rotation_angle: f64,
    pub d_opacity_logit: f64,
    pub d_color: Vector3<f64>,
}

fn rot2(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

impl Primitive2D {
    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// `R·S·Sᵀ·Rᵀ` before the screen-space floor.
    pub fn cov2d(&self) -> Matrix2<f64> {
        let r = rot2(self.rotation_angle);
        let s2 = Matrix2::from_diagonal(&self.log_scale2d.map(|v| (2.0 * v).exp()));
        r * s2 * r.transpose()
    }

    pub fn render_color(&self) -> Vector3<f64> {
        self.color.map(|c| c.clamp(0.0, 1.0))
    }

    /// Screen-space splat at depth 0; draw order falls back to the index.
    pub fn to_splat(&self, spec: &KernelSpec, width: usize, height: usize) -> Result<Option<Splat2D>> {
        splat_from_cov2d(
            self.mean2d,
            &self.cov2d(),
            0.0,
            self.render_color(),
            self.opacity(),
            spec,
            width,
            height,
        )
    }

    /// Flat record in the pixel plane: mean `(x, y, 0)`, scales
    /// `(sx, sy, 1)`, a rotation about z and a degree-0 color. Used to store
    /// 2D fits in the PLY layout.
    pub fn to_primitive3d(&self) -> Primitive3D {
        let half = 0.5 * self.rotation_angle;
        Primitive3D {
            mean: Vector3::new(self.mean2d.x, self.mean2d.y, 0.0),
            log_scale: Vector3::new(self.log_scale2d.x, self.log_scale2d.y, 0.0),
            rotation: Vector4::new(half.cos(), 0.0, 0.0, half.sin()),
            opacity_logit: self.opacity_logit,
            sh: vec![sh::rgb_to_dc(self.color)],
        }
    }

    pub fn backward(&self, g: &SplatGrads) -> Prim2DGrads {
        let r = rot2(self.rotation_angle);
        let s2 = self.log_scale2d.map(|v| (2.0 * v).exp());
        let cov = r * Matrix2::from_diagonal(&s2) * r.transpose();
        let d_cov = cov2d_grad_from_conic(&cov, &g.d_conic);
        let m = r.transpose() * d_cov * r;
        let (s, c) = self.rotation_angle.sin_cos();
        let dr = Matrix2::new(-s, -c, c, -s);
        let d_theta = 2.0 * (d_cov.component_mul(&(dr * Matrix2::from_diagonal(&s2) * r.transpose()))).sum();
        let o = self.opacity();
        let mut d_color = g.d_color;
        for ch in 0..3 {
            if !(0.0..=1.0).contains(&self.color[ch]) {
                d_color[ch] = 0.0;
            }
        }
        Prim2DGrads {
            d_mean2d: g.d_mean2d,
            d_log_scale2d: Vector2::new(2.0 * s2.x * m[(0, 0)], 2.0 * s2.y * m[(1, 1)]),
            d_rotation_angle: d_theta,
            d_opacity_logit: g.d_opacity * o * (1.0 - o),
            d_color,
        }
    }
}

/// `budget` isotropic splats spread over a jittered grid covering the
/// target, colored by the target pixel under each centre.
pub fn grid_init(target: &Image, budget: usize, rng: &mut impl Rng) -> Result<Vec<Primitive2D>> {
    let (w, h) = target.dims();
    if budget == 0 {
        return Err(Error::config("budget must be at least 1"));
    }
    if budget > w * h {
        return Err(Error::config(format!("budget {budget} exceeds the {} target pixels", w * h)));
    }
    let aspect = w as f64 / h as f64;
    let gx = ((budget as f64 * aspect).sqrt().ceil() as usize).clamp(1, w);
    let gy = budget.div_ceil(gx).clamp(1, h);
    let cells = gx * gy;
    let (cw, ch) = (w as f64 / gx as f64, h as f64 / gy as f64);
    let scale = (w.max(h) as f64 / (budget as f64).sqrt()).ln();
    Ok((0..budget)
        .map(|k| {
            let cell = k * cells / budget;
            let (cx, cy) = ((cell % gx) as f64, (cell / gx) as f64);
            let x = ((cx + rng.random_range(0.0..1.0)) * cw).min(w as f64 - 1e-9);
            let y = ((cy + rng.random_range(0.0..1.0)) * ch).min(h as f64 - 1e-9);
            let rgb = target.get(x as usize, y as usize);
            Primitive2D {
                mean2d: Vector2::new(x, y),
                log_scale2d: Vector2::new(scale, scale),
                rotation_angle: 0.0,
                opacity_logit: logit(0.1),
                color: Vector3::from(rgb),
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Fit2dResult {
    pub prims: Vec<Primitive2D>,
    pub trace: Vec<TracePoint>,
    /// Training loss of every iteration.
    pub losses: Vec<f64>,
    pub image: Image,
    pub psnr: f64,
    pub ssim: f64,
    pub skipped_updates: u64,
}

struct Frame {
    splats: Vec<Splat2D>,
    source: Vec<usize>,
}

fn project(prims: &[Primitive2D], spec: &KernelSpec, w: usize, h: usize) -> Result<Frame> {
    let mut f = Frame {
        splats: Vec::with_capacity(prims.len()),
        source: Vec::with_capacity(prims.len()),
    };
    for (i, p) in prims.iter().enumerate() {
        if let Some(s) = p.to_splat(spec, w, h)? {
            f.splats.push(s);
            f.source.push(i);
        }
    }
    Ok(f)
}

pub(crate) fn render_2d(prims: &[Primitive2D], spec: &KernelSpec, settings: &RenderSettings, w: usize, h: usize) -> Result<Image> {
    let f = project(prims, spec, w, h)?;
    Ok(rasterize(&f.splats, spec, settings, w, h)?.image)
}

const GROUPS: [&str; 5] = ["mean", "log_scale", "rotation", "opacity", "color"];

fn pack(prims: &[Primitive2D]) -> Vec<Vec<f64>> {
    let mut g: Vec<Vec<f64>> = (0..5).map(|_| Vec::new()).collect();
    for p in prims {
        g[0].extend(p.mean2d.iter());
        g[1].extend(p.log_scale2d.iter());
        g[2].push(p.rotation_angle);
        g[3].push(p.opacity_logit);
        g[4].extend(p.color.iter());
    }
    g
}

/// Writes updated parameters back; colors are projected onto `[0, 1]` so
/// the render-time clamp never hides a color from its gradient.
fn unpack(prims: &mut [Primitive2D], g: &[Vec<f64>]) {
    for (i, p) in prims.iter_mut().enumerate() {
        p.mean2d = Vector2::new(g[0][2 * i], g[0][2 * i + 1]);
        p.log_scale2d = Vector2::new(g[1][2 * i], g[1][2 * i + 1]);
        p.rotation_angle = g[2][i];
        p.opacity_logit = g[3][i];
        p.color = Vector3::new(g[4][3 * i], g[4][3 * i + 1], g[4][3 * i + 2]).map(|c| c.clamp(0.0, 1.0));
    }
}

fn pack_grads(grads: &[Prim2DGrads]) -> Vec<Vec<f64>> {
    let mut g: Vec<Vec<f64>> = (0..5).map(|_| Vec::new()).collect();
    for d in grads {
        g[0].extend(d.d_mean2d.iter());
        g[1].extend(d.d_log_scale2d.iter());
        g[2].push(d.d_rotation_angle);
        g[3].push(d.d_opacity_logit);
        g[4].extend(d.d_color.iter());
    }
    g
}

/// Fits a fixed budget of 2D splats to `target` with Adam on the combined
/// loss.
pub fn fit2d(target: &Image, cfg: &TrainConfig, log: &mut RunLog) -> Result<Fit2dResult> {
    cfg.validate()?;
    if !target.is_finite() {
        return Err(Error::domain("target image has non-finite values"));
    }
    let spec = cfg.kernel.resolve()?;
    let (w, h) = target.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prims = grid_init(target, cfg.budget, &mut rng)?;
    let lr = &cfg.lr2d;
    let mut adam = Adam::new(
        &[
            (GROUPS[0], lr.mean, 2),
            (GROUPS[1], lr.log_scale, 2),
            (GROUPS[2], lr.rotation, 1),
            (GROUPS[3], lr.opacity, 1),
            (GROUPS[4], lr.color, 3),
        ],
        prims.len(),
    );
    let base_rates = [lr.mean, lr.log_scale, lr.rotation, lr.opacity, lr.color];
    let mut trace = Vec::new();
    let mut losses = Vec::with_capacity(cfg.iterations);
    for iter in 1..=cfg.iterations {
        let t = (iter - 1) as f64 / cfg.iterations.saturating_sub(1).max(1) as f64;
        let factor = lr.final_fraction.powf(t);
        for (name, base) in GROUPS.iter().zip(base_rates) {
            adam.set_lr(name, base * factor);
        }
        let frame = project(&prims, &spec, w, h)?;
        let out = rasterize(&frame.splats, &spec, &cfg.render, w, h)?;
        let (loss, d_image) = combined_loss(&out.image, target, &cfg.loss)?;
        losses.push(loss);
        if cfg.snapshot_every > 0 && (iter == 1 || iter % cfg.snapshot_every == 0) {
            let point = TracePoint {
                iter,
                loss,
                psnr: psnr(&out.image, target)?,
                ssim: ssim(&out.image, target)?,
                splats: prims.len(),
            };
            log.event("step", &point)?;
            trace.push(point);
        }
        let g = backward_splats(&out, &d_image, &frame.splats, &spec, &cfg.render, cfg.ags)?;
        let mut grads = vec![Prim2DGrads::default(); prims.len()];
        for (k, &src) in frame.source.iter().enumerate() {
            grads[src] = prims[src].backward(&g[k]);
        }
        let mut params = pack(&prims);
        adam.step(&mut params, &pack_grads(&grads))?;
        unpack(&mut prims, &params);
    }
    let image = render_2d(&prims, &spec, &cfg.render, w, h)?;
    let result = Fit2dResult {
        psnr: psnr(&image, target)?,
        ssim: ssim(&image, target)?,
        image,
        prims,
        trace,
        losses,
        skipped_updates: adam.skipped(),
    };
    log.event(
        "final",
        &serde_json::json!({"psnr": result.psnr, "ssim": result.ssim, "splats": result.prims.len(), "skipped_updates": result.skipped_updates}),
    )?;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Precision;

    fn loss_of(p: &Primitive2D, weights: &Image, spec: &KernelSpec, settings: &RenderSettings) -> f64 {
        let img = render_2d(std::slice::from_ref(p), spec, settings, weights.width(), weights.height()).unwrap();
        img.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let spec = KernelSpec::new(crate::kernel::registry().get("gaussian").unwrap(), None, Some(8.0)).unwrap();
        let settings = RenderSettings {
            precision: Precision::F64,
            alpha_min: 1e-12,
            transmittance_floor: 1e-12,
            ..RenderSettings::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights = Image::from_fn(24, 24, |_, _| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let p = Primitive2D {
            mean2d: Vector2::new(11.3, 12.6),
            log_scale2d: Vector2::new(1.1, 0.6),
            rotation_angle: 0.4,
            opacity_logit: 0.3,
            color: Vector3::new(0.2, 0.5, 0.9),
        };
        let splat = p.to_splat(&spec, 24, 24).unwrap().unwrap();
        let out = rasterize(std::slice::from_ref(&splat), &spec, &settings, 24, 24).unwrap();
        let g = backward_splats(&out, &weights, std::slice::from_ref(&splat), &spec, &settings, crate::gradients::Ags::OFF).unwrap();
        let a = p.backward(&g[0]);
        let analytic = [
            a.d_mean2d.x,
            a.d_mean2d.y,
            a.d_log_scale2d.x,
            a.d_log_scale2d.y,
            a.d_rotation_angle,
            a.d_opacity_logit,
            a.d_color.x,
            a.d_color.y,
            a.d_color.z,
        ];
        let h = 1e-5;
        for (k, an) in analytic.iter().enumerate() {
            let nudge = |d: f64| {
                let mut q = p.clone();
                match k {
                    0 => q.mean2d.x += d,
                    1 => q.mean2d.y += d,
                    2 => q.log_scale2d.x += d,
                    3 => q.log_scale2d.y += d,
                    4 => q.rotation_angle += d,
                    5 => q.opacity_logit += d,
                    _ => q.color[k - 6] += d,
                }
                loss_of(&q, &weights, &spec, &settings)
            };
            let num = (nudge(h) - nudge(-h)) / (2.0 * h);
            assert!((an - num).abs() <= 1e-6 + 1e-5 * num.abs(), "param {k}: {an} vs {num}");
        }
    }

    #[test]
    fn grid_init_covers_target() {
        let target = Image::from_fn(64, 32, |x, _| [x as f64 / 63.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let prims = grid_init(&target, 100, &mut rng).unwrap();
        assert_eq!(prims.len(), 100);
        for p in &prims {
            assert!(p.mean2d.x >= 0.0 && p.mean2d.x < 64.0 && p.mean2d.y >= 0.0 && p.mean2d.y < 32.0);
            assert_eq!(p.color.x, target.get(p.mean2d.x as usize, p.mean2d.y as usize)[0]);
            assert!((p.opacity() - 0.1).abs() < 1e-12);
            assert!((p.log_scale2d.x.exp() - 6.4).abs() < 1e-12);
        }
        assert!(prims.iter().any(|p| p.mean2d.x > 56.0) && prims.iter().any(|p| p.mean2d.y > 28.0));
    }

    #[test]
    fn budget_checks() {
        let target = Image::new(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(grid_init(&target, 17, &mut rng).unwrap_err().is_config());
        assert!(grid_init(&target, 0, &mut rng).unwrap_err().is_config());
        assert_eq!(grid_init(&target, 16, &mut rng).unwrap().len(), 16);
    }
}
