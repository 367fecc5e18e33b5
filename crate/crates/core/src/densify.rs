//! Adaptive density control: clone, split, prune and opacity reset.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{logit, quat_to_matrix, Primitive3D};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensifyThresholds {
    /// Mean per-view NDC gradient norm that triggers growth.
    pub grad_threshold: f64,
    /// Screen radius as a fraction of the larger image side.
    pub grow_scale2d: f64,
    /// Largest 3D scale as a fraction of the scene extent.
    pub grow_scale3d: f64,
    pub prune_scale2d: f64,
    pub prune_scale3d: f64,
    pub prune_opacity: f64,
}

impl DensifyThresholds {
    pub const LINEAR: Self = Self {
        grad_threshold: 0.0002,
        grow_scale2d: 0.05,
        grow_scale3d: 0.006,
        prune_scale2d: 0.15,
        prune_scale3d: 0.4,
        prune_opacity: 0.025,
    };

    pub const GAUSSIAN: Self = Self {
        grad_threshold: 0.0002,
        grow_scale2d: 0.05,
        grow_scale3d: 0.01,
        prune_scale2d: 0.15,
        prune_scale3d: 0.1,
        prune_opacity: 0.005,
    };

    pub const PRESETS: [&'static str; 2] = ["3dls", "3dgs"];

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "3dls" => Ok(Self::LINEAR),
            "3dgs" => Ok(Self::GAUSSIAN),
            other => Err(Error::config(format!("unknown densify preset {other:?} (expected 3dls or 3dgs)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.grad_threshold,
            self.grow_scale2d,
            self.grow_scale3d,
            self.prune_scale2d,
            self.prune_scale3d,
            self.prune_opacity,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::config("densify thresholds must be positive"))
        }
    }
}

impl Default for DensifyThresholds {
    fn default() -> Self {
        Self::LINEAR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifySchedule {
    pub start_iter: usize,
    pub stop_iter: usize,
    pub interval: usize,
    pub opacity_reset_interval: usize,
    pub split_count: usize,
    pub split_scale_divisor: f64,
}

impl Default for DensifySchedule {
    fn default() -> Self {
        Self {
            start_iter: 500,
            stop_iter: 15000,
            interval: 100,
            opacity_reset_interval: 3000,
            split_count: 2,
            split_scale_divisor: 1.6,
        }
    }
}

impl DensifySchedule {
    pub fn validate(&self) -> Result<()> {
        if self.start_iter >= self.stop_iter {
            return Err(Error::config("densify start_iter must be below stop_iter"));
        }
        if self.interval == 0 || self.opacity_reset_interval == 0 || self.split_count == 0 {
            return Err(Error::config("densify intervals and split_count must be positive"));
        }
        if !(self.split_scale_divisor.is_finite() && self.split_scale_divisor > 0.0) {
            return Err(Error::config("split_scale_divisor must be positive"));
        }
        Ok(())
    }

    /// `iter` counts completed steps, starting at 1.
    pub fn densify_at(&self, iter: usize) -> bool {
        iter > self.start_iter && iter < self.stop_iter && iter % self.interval == 0
    }

    pub fn reset_opacity_at(&self, iter: usize) -> bool {
        iter < self.stop_iter && iter % self.opacity_reset_interval == 0
    }
}

/// Per-primitive accumulators between densification calls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
    pub max_radius_frac: Vec<f64>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_sum: vec![0.0; n],
            count: vec![0; n],
            max_radius_frac: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_sum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_sum.is_empty()
    }

    /// Record one view in which primitive `i` was visible.
    pub fn record(&mut self, i: usize, grad_norm: f64, radius_frac: f64) {
        self.grad_sum[i] += grad_norm;
        self.count[i] += 1;
        self.max_radius_frac[i] = self.max_radius_frac[i].max(radius_frac);
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }

    fn copy_entry(&self, i: usize, radius_scale: f64, into: &mut DensifyStats) {
        into.grad_sum.push(self.grad_sum[i]);
        into.count.push(self.count[i]);
        into.max_radius_frac.push(self.max_radius_frac[i] * radius_scale);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DensifyReport {
    pub before: usize,
    pub clones: usize,
    pub splits: usize,
    pub prunes: usize,
    pub after: usize,
}

#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    pub report: DensifyReport,
    /// For every surviving primitive, the index it held before the call if it
    /// is an original, `None` if it was created by the call.
    pub sources: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Keep,
    Clone,
    Split,
}

/// Grow then prune. Size-based pruning only starts once `iter` has passed
/// the first opacity reset; opacity pruning always applies. `stats` is
/// reset to zeros for the new population.
#[allow(clippy::too_many_arguments)]
pub fn densify_and_prune(
    prims: &mut Vec<Primitive3D>,
    stats: &mut DensifyStats,
    thresholds: &DensifyThresholds,
    schedule: &DensifySchedule,
    iter: usize,
    scene_extent: f64,
    rng: &mut impl Rng,
) -> Result<DensifyOutcome> {
    thresholds.validate()?;
    schedule.validate()?;
    if stats.len() != prims.len() {
        return Err(Error::config(format!(
            "densify stats cover {} primitives, scene has {}",
            stats.len(),
            prims.len()
        )));
    }
    let before = prims.len();
    let mut report = DensifyReport {
        before,
        ..DensifyReport::default()
    };
    let ln_div = schedule.split_scale_divisor.ln();
    let mut grown = Vec::with_capacity(before);
    let mut grown_src = Vec::with_capacity(before);
    let mut grown_stats = DensifyStats::default();
    for (i, p) in prims.iter().enumerate() {
        let action = if stats.mean_grad(i) > thresholds.grad_threshold {
            let big3d = p.scales().max() > thresholds.grow_scale3d * scene_extent;
            let big2d = stats.max_radius_frac[i] > thresholds.grow_scale2d;
            if big3d || big2d {
                Action::Split
            } else {
                Action::Clone
            }
        } else {
            Action::Keep
        };
        match action {
            Action::Keep | Action::Clone => {
                grown.push(p.clone());
                grown_src.push(Some(i));
                stats.copy_entry(i, 1.0, &mut grown_stats);
                if action == Action::Clone {
                    report.clones += 1;
                    grown.push(p.clone());
                    grown_src.push(None);
                    stats.copy_entry(i, 1.0, &mut grown_stats);
                }
            }
            Action::Split => {
                report.splits += 1;
                let r = quat_to_matrix(&p.rotation);
                let s = p.scales();
                for _ in 0..schedule.split_count {
                    let z = Vector3::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    );
                    let mut child = p.clone();
                    child.mean = p.mean + r * s.component_mul(&z);
                    child.log_scale = p.log_scale.map(|v| v - ln_div);
                    grown.push(child);
                    grown_src.push(None);
                    stats.copy_entry(i, 1.0 / schedule.split_scale_divisor, &mut grown_stats);
                }
            }
        }
    }
    let check_size = iter > schedule.opacity_reset_interval;
    let mut out = Vec::with_capacity(grown.len());
    let mut sources = Vec::with_capacity(grown.len());
    for (k, p) in grown.into_iter().enumerate() {
        if prune_predicate(&p, grown_stats.max_radius_frac[k], thresholds, scene_extent, check_size) {
            report.prunes += 1;
        } else {
            out.push(p);
            sources.push(grown_src[k]);
        }
    }
    report.after = out.len();
    *prims = out;
    *stats = DensifyStats::new(prims.len());
    Ok(DensifyOutcome { report, sources })
}

/// True when a primitive should be removed. `check_size` enables the 3D
/// scale and screen radius tests.
pub fn prune_predicate(
    p: &Primitive3D,
    radius_frac: f64,
    thresholds: &DensifyThresholds,
    scene_extent: f64,
    check_size: bool,
) -> bool {
    p.opacity() < thresholds.prune_opacity
        || (check_size
            && (p.scales().max() > thresholds.prune_scale3d * scene_extent || radius_frac > thresholds.prune_scale2d))
}

pub const OPACITY_RESET_CEILING: f64 = 0.01;

/// Clamp every opacity to at most `ceiling`.
pub fn reset_opacity(prims: &mut [Primitive3D], ceiling: f64) {
    let cap = logit(ceiling);
    for p in prims {
        p.opacity_logit = p.opacity_logit.min(cap);
    }
}

/// Radius of the bounding sphere of the means, centred on their centroid.
pub fn scene_extent(points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let c = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    points.iter().map(|p| (p - c).norm()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Past the first opacity reset, so every prune test is live.
    const LATE: usize = 5000;

    fn prim(scale: f64, opacity: f64) -> Primitive3D {
        Primitive3D::isotropic(Vector3::zeros(), scale, opacity, Vector3::new(0.5, 0.5, 0.5), 0)
    }

    fn run(prims: &mut Vec<Primitive3D>, grads: &[f64], th: &DensifyThresholds) -> DensifyOutcome {
        let mut stats = DensifyStats::new(prims.len());
        for (i, g) in grads.iter().enumerate() {
            stats.record(i, *g, 0.01);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        densify_and_prune(prims, &mut stats, th, &DensifySchedule::default(), LATE, 1.0, &mut rng).unwrap()
    }

    #[test]
    fn presets_match_table() {
        let l = DensifyThresholds::preset("3dls").unwrap();
        assert_eq!(
            [l.grad_threshold, l.grow_scale2d, l.grow_scale3d, l.prune_scale2d, l.prune_scale3d, l.prune_opacity],
            [0.0002, 0.05, 0.006, 0.15, 0.4, 0.025]
        );
        let g = DensifyThresholds::preset("3dgs").unwrap();
        assert_eq!(
            [g.grad_threshold, g.grow_scale2d, g.grow_scale3d, g.prune_scale2d, g.prune_scale3d, g.prune_opacity],
            [0.0002, 0.05, 0.01, 0.15, 0.1, 0.005]
        );
        assert!(DensifyThresholds::preset("abc").unwrap_err().is_config());
    }

    #[test]
    fn large_high_gradient_primitive_splits() {
        let mut prims = vec![prim(0.02, 0.5)];
        let out = run(&mut prims, &[0.0003], &DensifyThresholds::LINEAR);
        assert_eq!(out.report.splits, 1);
        assert_eq!(out.report.clones, 0);
        assert_eq!(prims.len(), 2);
        assert_eq!(out.sources, vec![None, None]);
        for c in &prims {
            for k in 0..3 {
                assert_relative_eq!(c.scales()[k], 0.02 / 1.6, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn small_high_gradient_primitive_clones() {
        let mut prims = vec![prim(0.001, 0.5)];
        let out = run(&mut prims, &[0.0003], &DensifyThresholds::LINEAR);
        assert_eq!(out.report.clones, 1);
        assert_eq!(prims.len(), 2);
        assert_eq!(prims[0], prims[1]);
        assert_eq!(out.sources, vec![Some(0), None]);
    }

    #[test]
    fn opacity_prune_depends_on_preset() {
        let mut a = vec![prim(0.001, 0.01)];
        let out = run(&mut a, &[0.0], &DensifyThresholds::LINEAR);
        assert_eq!(out.report.prunes, 1);
        assert!(a.is_empty());
        let mut b = vec![prim(0.001, 0.01)];
        let out = run(&mut b, &[0.0], &DensifyThresholds::GAUSSIAN);
        assert_eq!(out.report.prunes, 0);
        assert_eq!(b.len(), 1);
    }

    #[test]
    fn low_gradient_primitive_untouched() {
        let mut prims = vec![prim(0.001, 0.5)];
        let orig = prims.clone();
        let out = run(&mut prims, &[0.0001], &DensifyThresholds::LINEAR);
        assert_eq!(out.report, DensifyReport { before: 1, clones: 0, splits: 0, prunes: 0, after: 1 });
        assert_eq!(prims, orig);
    }

    #[test]
    fn empty_scene_is_noop() {
        let mut prims = Vec::new();
        let out = run(&mut prims, &[], &DensifyThresholds::LINEAR);
        assert_eq!(out.report, DensifyReport::default());
    }

    #[test]
    fn stats_reset_after_call() {
        let mut prims = vec![prim(0.001, 0.5), prim(0.02, 0.5)];
        let mut stats = DensifyStats::new(2);
        stats.record(0, 1.0, 0.01);
        stats.record(1, 1.0, 0.01);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        densify_and_prune(&mut prims, &mut stats, &DensifyThresholds::LINEAR, &DensifySchedule::default(), LATE, 1.0, &mut rng).unwrap();
        assert_eq!(stats, DensifyStats::new(prims.len()));
    }

    #[test]
    fn reset_opacity_clamps() {
        let mut prims = vec![prim(0.1, 0.9), prim(0.1, 0.005)];
        reset_opacity(&mut prims, OPACITY_RESET_CEILING);
        assert_relative_eq!(prims[0].opacity(), 0.01, max_relative = 1e-12);
        assert_relative_eq!(prims[1].opacity(), 0.005, max_relative = 1e-12);
    }

    #[test]
    fn schedule_gates() {
        let s = DensifySchedule::default();
        assert!(!s.densify_at(500));
        assert!(s.densify_at(600));
        assert!(!s.densify_at(650));
        assert!(!s.densify_at(15000));
        assert!(s.reset_opacity_at(3000));
        assert!(!s.reset_opacity_at(2999));
        let bad = DensifySchedule { start_iter: 10, stop_iter: 5, ..s };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn extent_of_symmetric_points() {
        let pts = [Vector3::new(1.0, 0.0, 0.0), Vector3::new(-1.0, 0.0, 0.0), Vector3::new(0.0, 0.5, 0.0), Vector3::new(0.0, -0.5, 0.0)];
        assert_relative_eq!(scene_extent(&pts), 1.0);
    }
}
