use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::{fit2d, TrainConfig};
use crate::error::{Error, Result};
use crate::gradients::Ags;
use crate::io::{save_png, RunLog};
use crate::kernel::KernelConfig;
use crate::pattern::generate_pattern;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub pattern: String,
    pub kernel: String,
    pub lambda: f64,
    pub ags: bool,
    pub budget: usize,
    pub iterations: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub seconds: f64,
}

pub const CSV_HEADER: &str = "pattern,kernel,lambda,ags,budget,iterations,psnr,ssim,seconds";

impl StudyRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.3}",
            self.pattern, self.kernel, self.lambda, self.ags, self.budget, self.iterations, self.psnr, self.ssim, self.seconds
        )
    }
}

/// Runs [`fit2d`] for every (pattern, kernel) pair with the same budget,
/// iterations and seed. Gaussian rows are the baseline and run without
/// AGS; every other kernel uses `base.ags`. With `out_dir`, writes `study.csv` plus
/// `<pattern>_<kernel>.png` and `<pattern>_target.png`.
pub fn kernel_study(
    patterns: &[String],
    kernels: &[KernelConfig],
    size: usize,
    base: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<StudyRow>> {
    if patterns.is_empty() || kernels.is_empty() {
        return Err(Error::config("study needs at least one pattern and one kernel"));
    }
    for k in kernels {
        k.resolve()?;
    }
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rows = Vec::with_capacity(patterns.len() * kernels.len());
    for pattern in patterns {
        let target = generate_pattern(pattern, size)?;
        if let Some(dir) = out_dir {
            save_png(&dir.join(format!("{pattern}_target.png")), &target)?;
        }
        for kernel in kernels {
            let spec = kernel.resolve()?;
            let cfg = TrainConfig {
                kernel: kernel.clone(),
                ags: if spec.name() == "gaussian" { Ags::OFF } else { base.ags },
                ..base.clone()
            };
            let t0 = Instant::now();
            let fit = fit2d(&target, &cfg, &mut RunLog::disabled())?;
            let row = StudyRow {
                pattern: pattern.clone(),
                kernel: spec.name().to_string(),
                lambda: spec.lambda(),
                ags: cfg.ags.enabled,
                budget: cfg.budget,
                iterations: cfg.iterations,
                psnr: fit.psnr,
                ssim: fit.ssim,
                seconds: t0.elapsed().as_secs_f64(),
            };
            if let Some(dir) = out_dir {
                save_png(&dir.join(format!("{pattern}_{}.png", spec.name())), &fit.image)?;
            }
            rows.push(row);
        }
    }
    if let Some(dir) = out_dir {
        let mut text = String::from(CSV_HEADER);
        text.push('\n');
        for r in &rows {
            text.push_str(&r.csv());
            text.push('\n');
        }
        let path = dir.join("study.csv");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(rows)
}
