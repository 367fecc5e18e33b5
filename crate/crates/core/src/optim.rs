//! Adam over packed per-group parameter vectors.
//!
//! Each group stores `n · width` values for `n` primitives. A primitive whose
//! gradient has any non-finite entry in any group is left untouched for the
//! step and counted.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct GroupState {
    pub name: String,
    pub lr: f64,
    pub width: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl GroupState {
    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    groups: Vec<GroupState>,
    step: u64,
    skipped: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    /// `groups` are `(name, lr, width)` triples; `count` the primitive count.
    pub fn new(groups: &[(&str, f64, usize)], count: usize) -> Self {
        Self {
            groups: groups
                .iter()
                .map(|&(name, lr, width)| GroupState {
                    name: name.to_string(),
                    lr,
                    width,
                    m: vec![0.0; width * count],
                    v: vec![0.0; width * count],
                })
                .collect(),
            step: 0,
            skipped: 0,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Primitive updates skipped because of non-finite gradients, cumulative.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    pub fn groups(&self) -> &[GroupState] {
        &self.groups
    }

    pub fn group(&self, name: &str) -> Option<&GroupState> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn set_lr(&mut self, name: &str, lr: f64) {
        if let Some(g) = self.groups.iter_mut().find(|g| g.name == name) {
            g.lr = lr;
        }
    }

    fn count(&self) -> usize {
        self.groups.first().map_or(0, |g| if g.width == 0 { 0 } else { g.m.len() / g.width })
    }

    /// One Adam step. `params[g]` and `grads[g]` follow the group order
    /// given at construction.
    pub fn step(&mut self, params: &mut [Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        let n = self.count();
        if params.len() != self.groups.len() || grads.len() != self.groups.len() {
            return Err(Error::config(format!(
                "expected {} parameter groups, got {} params and {} grads",
                self.groups.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((g, p), d) in self.groups.iter().zip(params.iter()).zip(grads) {
            if p.len() != g.width * n || d.len() != g.width * n {
                return Err(Error::config(format!(
                    "group {}: expected {} values, got {} params and {} grads",
                    g.name,
                    g.width * n,
                    p.len(),
                    d.len()
                )));
            }
        }
        let valid: Vec<bool> = (0..n)
            .map(|i| {
                self.groups
                    .iter()
                    .zip(grads)
                    .all(|(g, d)| d[i * g.width..(i + 1) * g.width].iter().all(|x| x.is_finite()))
            })
            .collect();
        self.skipped += valid.iter().filter(|v| !**v).count() as u64;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for ((g, p), d) in self.groups.iter_mut().zip(params.iter_mut()).zip(grads) {
            for (i, ok) in valid.iter().enumerate() {
                if !ok {
                    continue;
                }
                for k in i * g.width..(i + 1) * g.width {
                    g.m[k] = b1 * g.m[k] + (1.0 - b1) * d[k];
                    g.v[k] = b2 * g.v[k] + (1.0 - b2) * d[k] * d[k];
                    let mh = g.m[k] / bc1;
                    let vh = g.v[k] / bc2;
                    p[k] -= g.lr * mh / (vh.sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    /// Rebuild the moments after a structural change. Entry `j` of `sources`
    /// names the old primitive whose moments the new primitive `j` inherits;
    /// `None` starts from zero.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        for g in &mut self.groups {
            let w = g.width;
            let mut m = vec![0.0; w * sources.len()];
            let mut v = vec![0.0; w * sources.len()];
            for (j, src) in sources.iter().enumerate() {
                if let Some(i) = *src {
                    m[j * w..(j + 1) * w].copy_from_slice(&g.m[i * w..(i + 1) * w]);
                    v[j * w..(j + 1) * w].copy_from_slice(&g.v[i * w..(i + 1) * w]);
                }
            }
            g.m = m;
            g.v = v;
        }
    }
}

/// Log-linear interpolation from `start` to `end` over `steps` iterations,
/// held at `end` afterwards.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ExpDecay {
    pub start: f64,
    pub end: f64,
    pub steps: usize,
}

impl ExpDecay {
    pub fn at(&self, iter: usize) -> f64 {
        if self.steps == 0 {
            return self.end;
        }
        let t = (iter as f64 / self.steps as f64).clamp(0.0, 1.0);
        (self.start.ln() * (1.0 - t) + self.end.ln() * t).exp()
    }
}

/// Learning rates of the 3D parameter groups.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub mean_start: f64,
    pub mean_end: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub sh_dc: f64,
    /// Higher bands use `sh_dc / sh_rest_divisor`.
    pub sh_rest_divisor: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            mean_start: 1.6e-4,
            mean_end: 1.6e-6,
            log_scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            sh_dc: 2.5e-3,
            sh_rest_divisor: 20.0,
        }
    }
}

impl LearningRates {
    pub fn mean_schedule(&self, extent: f64, steps: usize) -> ExpDecay {
        ExpDecay {
            start: self.mean_start * extent,
            end: self.mean_end * extent,
            steps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mean_start,
            self.mean_end,
            self.log_scale,
            self.rotation,
            self.opacity,
            self.sh_dc,
            self.sh_rest_divisor,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::config("learning rates must be positive and finite"))
        }
    }
}
