//! Training loss (L1 + L2 + SSIM) with its exact gradient, and image metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_buf::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    #[serde(rename = "l1")]
    pub alpha_l1: f64,
    #[serde(rename = "l2")]
    pub beta_l2: f64,
    #[serde(rename = "ssim")]
    pub gamma_ssim: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha_l1: 0.6,
            beta_l2: 0.2,
            gamma_ssim: 0.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha_l1, self.beta_l2, self.gamma_ssim];
        if w.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::config(format!("loss weights must be non-negative, got {w:?}")))
        }
    }
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.map(|v| v / sum)
}

/// Single-channel plane.
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn channel(img: &Image, ch: usize) -> Self {
        Self {
            w: img.width(),
            h: img.height(),
            v: img.data().iter().skip(ch).step_by(3).copied().collect(),
        }
    }

    fn zip(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// "Valid" separable correlation: output is `(w − 10) × (h − 10)`.
fn filter_valid(p: &Plane, k: &[f64; SSIM_WINDOW]) -> Plane {
    let n = SSIM_WINDOW;
    let ow = p.w + 1 - n;
    let oh = p.h + 1 - n;
    let mut tmp = vec![0.0; ow * p.h];
    for y in 0..p.h {
        let row = &p.v[y * p.w..(y + 1) * p.w];
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * row[x + t];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                acc += kv * tmp[(y + t) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    Plane { w: ow, h: oh, v: out }
}

/// Adjoint of [`filter_valid`]: scatters a `(w − 10) × (h − 10)` map back
/// to `w × h`.
fn filter_adjoint(p: &Plane, k: &[f64; SSIM_WINDOW], w: usize, h: usize) -> Plane {
    let n = SSIM_WINDOW;
    let ow = p.w;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..p.h {
        for x in 0..ow {
            let g = p.v[y * ow + x];
            for (t, kv) in k.iter().enumerate() {
                tmp[(y + t) * ow + x] += kv * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let g = tmp[y * ow + x];
            for (t, kv) in k.iter().enumerate().take(n) {
                out[y * w + x + t] += kv * g;
            }
        }
    }
    Plane { w, h, v: out }
}

fn check_ssim_shape(a: &Image, b: &Image) -> Result<()> {
    a.check_same_shape(b)?;
    if a.width() < SSIM_WINDOW || a.height() < SSIM_WINDOW {
        return Err(Error::config(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window",
            a.width(),
            a.height()
        )));
    }
    Ok(())
}

/// Mean SSIM and, optionally, its gradient with respect to `x`.
fn ssim_impl(x: &Image, y: &Image, want_grad: bool) -> (f64, Option<Image>) {
    let k = gaussian_window();
    let (w, h) = x.dims();
    let valid = (w + 1 - SSIM_WINDOW) * (h + 1 - SSIM_WINDOW);
    let n = (valid * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(w, h));
    for ch in 0..3 {
        let px = Plane::channel(x, ch);
        let py = Plane::channel(y, ch);
        let mx = filter_valid(&px, &k);
        let my = filter_valid(&py, &k);
        let exx = filter_valid(&px.zip(&px, |a, _| a * a), &k);
        let eyy = filter_valid(&py.zip(&py, |a, _| a * a), &k);
        let exy = filter_valid(&px.zip(&py, |a, b| a * b), &k);
        let mut d_mx = vec![0.0; valid];
        let mut d_exx = vec![0.0; valid];
        let mut d_exy = vec![0.0; valid];
        for i in 0..valid {
            let (ux, uy) = (mx.v[i], my.v[i]);
            let sxx = exx.v[i] - ux * ux;
            let syy = eyy.v[i] - uy * uy;
            let sxy = exy.v[i] - ux * uy;
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * sxy + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = sxx + syy + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let ds_dux = 2.0 * uy * a2 / (b1 * b2) - 2.0 * ux * s / b1;
                let ds_dsxx = -s / b2;
                let ds_dsxy = 2.0 * a1 / (b1 * b2);
                d_mx[i] = (ds_dux - 2.0 * ux * ds_dsxx - uy * ds_dsxy) / n;
                d_exx[i] = ds_dsxx / n;
                d_exy[i] = ds_dsxy / n;
            }
        }
        if let Some(g) = grad.as_mut() {
            let wrap = |v: Vec<f64>| Plane { w: mx.w, h: mx.h, v };
            let a = filter_adjoint(&wrap(d_mx), &k, w, h);
            let b = filter_adjoint(&wrap(d_exx), &k, w, h);
            let c = filter_adjoint(&wrap(d_exy), &k, w, h);
            let data = g.data_mut();
            for i in 0..w * h {
                data[3 * i + ch] = a.v[i] + 2.0 * px.v[i] * b.v[i] + py.v[i] * c.v[i];
            }
        }
    }
    (total / n, grad)
}

/// Mean local SSIM over all valid 11×11 windows and channels.
pub fn ssim(pred: &Image, gt: &Image) -> Result<f64> {
    check_ssim_shape(pred, gt)?;
    Ok(ssim_impl(pred, gt, false).0)
}

/// SSIM and `∂SSIM/∂pred`.
pub fn ssim_with_grad(pred: &Image, gt: &Image) -> Result<(f64, Image)> {
    check_ssim_shape(pred, gt)?;
    let (s, g) = ssim_impl(pred, gt, true);
    Ok((s, g.expect("gradient requested")))
}

/// The three loss terms before weighting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub l1: f64,
    pub l2: f64,
    pub ssim: f64,
}

impl LossTerms {
    pub fn combine(&self, w: &LossWeights) -> f64 {
        w.alpha_l1 * self.l1 + w.beta_l2 * self.l2 + w.gamma_ssim * (1.0 - self.ssim)
    }
}

pub fn loss_terms(pred: &Image, gt: &Image) -> Result<LossTerms> {
    check_ssim_shape(pred, gt)?;
    let n = pred.data().len() as f64;
    let (mut l1, mut l2) = (0.0, 0.0);
    for (a, b) in pred.data().iter().zip(gt.data()) {
        let d = a - b;
        l1 += d.abs();
        l2 += d * d;
    }
    Ok(LossTerms {
        l1: l1 / n,
        l2: l2 / n,
        ssim: ssim_impl(pred, gt, false).0,
    })
}

/// `α·L1 + β·L2 + γ·(1 − SSIM)` and its gradient with respect to `pred`.
pub fn combined_loss(pred: &Image, gt: &Image, w: &LossWeights) -> Result<(f64, Image)> {
    w.validate()?;
    check_ssim_shape(pred, gt)?;
    let n = pred.data().len() as f64;
    let (s, ds) = if w.gamma_ssim != 0.0 {
        let (s, g) = ssim_impl(pred, gt, true);
        (s, g)
    } else {
        (ssim_impl(pred, gt, false).0, None)
    };
    let mut grad = Image::new(pred.width(), pred.height());
    let (mut l1, mut l2) = (0.0, 0.0);
    for (i, (a, b)) in pred.data().iter().zip(gt.data()).enumerate() {
        let d = a - b;
        l1 += d.abs();
        l2 += d * d;
        let sign = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        let mut g = w.alpha_l1 * sign / n + w.beta_l2 * 2.0 * d / n;
        if let Some(ds) = &ds {
            g -= w.gamma_ssim * ds.data()[i];
        }
        grad.data_mut()[i] = g;
    }
    let terms = LossTerms {
        l1: l1 / n,
        l2: l2 / n,
        ssim: s,
    };
    Ok((terms.combine(w), grad))
}

pub fn mse(pred: &Image, gt: &Image) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let n = pred.data().len().max(1) as f64;
    Ok(pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// `10·log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, gt)?))
}
