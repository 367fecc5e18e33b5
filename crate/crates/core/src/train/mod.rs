//! Training harnesses: 2D pattern fitting, multi-view 3D fitting and the
//! kernel study.

mod fit2d;
mod fit3d;
pub mod fixture;
mod study;

use serde::{Deserialize, Serialize};

pub use fit2d::{fit2d, grid_init, Fit2dResult, Prim2DGrads, Primitive2D};
pub use fit3d::{fit3d, init_from_dataset, Fit3dResult, TrainSink};
pub use study::{kernel_study, StudyRow};

use crate::densify::{DensifySchedule, DensifyThresholds};
use crate::error::{Error, Result};
use crate::gradients::Ags;
use crate::kernel::KernelConfig;
use crate::losses::LossWeights;
use crate::optim::LearningRates;
use crate::raster::RenderSettings;
use crate::sh;

/// Learning rates of the 2D harness; positions and scales live in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates2D {
    pub mean: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
    /// Every group decays log-linearly to this fraction of its rate by the
    /// last iteration; 1 keeps the rates constant.
    pub final_fraction: f64,
}

impl Default for LearningRates2D {
    fn default() -> Self {
        Self {
            mean: 0.05,
            log_scale: 0.01,
            rotation: 0.01,
            opacity: 0.05,
            color: 0.01,
            final_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub thresholds: DensifyThresholds,
    pub schedule: DensifySchedule,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            thresholds: DensifyThresholds::LINEAR,
            schedule: DensifySchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub iterations: usize,
    /// Splat count of the 2D harness.
    pub budget: usize,
    pub kernel: KernelConfig,
    pub ags: Ags,
    pub loss: LossWeights,
    pub seed: u64,
    /// Metric trace and log cadence; 0 disables intermediate evaluation.
    pub snapshot_every: usize,
    pub render: RenderSettings,
    pub lr2d: LearningRates2D,
    pub lr: LearningRates,
    /// 3D harness only; the 2D harness always runs at a fixed budget.
    pub densify: DensifyConfig,
    pub sh_degree: usize,
    /// Every n-th camera (index 0, n, 2n, ...) is held out of training.
    pub holdout_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            budget: 2000,
            kernel: KernelConfig::default(),
            ags: Ags::ON,
            loss: LossWeights::default(),
            seed: 0,
            snapshot_every: 100,
            render: RenderSettings::default(),
            lr2d: LearningRates2D::default(),
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
            sh_degree: 3,
            holdout_every: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be positive"));
        }
        if self.budget == 0 {
            return Err(Error::config("budget must be at least 1"));
        }
        if self.sh_degree > sh::MAX_DEGREE {
            return Err(Error::config(format!("sh_degree must be at most {}", sh::MAX_DEGREE)));
        }
        if self.holdout_every == 1 {
            return Err(Error::config("holdout_every = 1 would hold out every camera"));
        }
        self.kernel.resolve()?;
        self.loss.validate()?;
        self.render.validate()?;
        self.lr.validate()?;
        let l = &self.lr2d;
        if ![l.mean, l.log_scale, l.rotation, l.opacity, l.color]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
        {
            return Err(Error::config("2D learning rates must be positive"));
        }
        if !(l.final_fraction > 0.0 && l.final_fraction <= 1.0) {
            return Err(Error::config("lr2d.final_fraction must lie in (0, 1]"));
        }
        if self.densify.enabled {
            self.densify.thresholds.validate()?;
            self.densify.schedule.validate()?;
        }
        Ok(())
    }
}

/// One evaluation point of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    pub iter: usize,
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub splats: usize,
}
