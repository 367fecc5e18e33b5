//! Attenuation kernels over Mahalanobis distance.
//!
//! Every kernel family implements [`Attenuation`], a falloff `f(u)` on the
//! aligned distance `u = d / λ`. Families are registered by name in a
//! [`KernelRegistry`] and selected at runtime; [`KernelSpec`] pairs a family
//! with its alignment factor λ.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A radial falloff `f(u)` with `f(0) = 1`, non-increasing in `u ≥ 0`.
pub trait Attenuation: Send + Sync + fmt::Debug {
    /// Registry name, also used on the command line.
    fn name(&self) -> &'static str;

    /// Alignment factor λ used when none is configured.
    fn default_lambda(&self) -> f64;

    /// Whether `f(u) = 0` for all `u ≥ 1`.
    fn bounded(&self) -> bool;

    fn value(&self, u: f64) -> f64;

    /// `df/du`. At a bounded family's rim (`u = 1`) this returns the
    /// family's boundary convention.
    fn slope(&self, u: f64) -> f64;

    /// `f` as a function of the squared distance `s = u²`.
    fn value_sq(&self, s: f64) -> f64 {
        self.value(s.sqrt())
    }

    /// `d f(√s) / ds`. Families with a cusp at the origin return 0 at `s = 0`.
    fn slope_sq(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let u = s.sqrt();
        self.slope(u) / (2.0 * u)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Gaussian;

impl Attenuation for Gaussian {
    fn name(&self) -> &'static str {
        "gaussian"
    }
    fn default_lambda(&self) -> f64 {
        1.0
    }
    fn bounded(&self) -> bool {
        false
    }
    fn value(&self, u: f64) -> f64 {
        (-0.5 * u * u).exp()
    }
    fn slope(&self, u: f64) -> f64 {
        -u * (-0.5 * u * u).exp()
    }
    fn value_sq(&self, s: f64) -> f64 {
        (-0.5 * s).exp()
    }
    fn slope_sq(&self, s: f64) -> f64 {
        -0.5 * (-0.5 * s).exp()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Laplacian;

impl Attenuation for Laplacian {
    fn name(&self) -> &'static str {
        "laplacian"
    }
    fn default_lambda(&self) -> f64 {
        1.0
    }
    fn bounded(&self) -> bool {
        false
    }
    fn value(&self, u: f64) -> f64 {
        (-u).exp()
    }
    fn slope(&self, u: f64) -> f64 {
        -(-u).exp()
    }
}

/// `½(1 + cos πu)` on `[0, 1]`, zero beyond.
#[derive(Debug, Clone, Copy, Default)]
pub struct RaisedCosine;

impl Attenuation for RaisedCosine {
    fn name(&self) -> &'static str {
        "cosine"
    }
    fn default_lambda(&self) -> f64 {
        2.5
    }
    fn bounded(&self) -> bool {
        true
    }
    fn value(&self, u: f64) -> f64 {
        if u <= 1.0 {
            0.5 * (1.0 + (PI * u).cos())
        } else {
            0.0
        }
    }
    fn slope(&self, u: f64) -> f64 {
        if u < 1.0 {
            -0.5 * PI * (PI * u).sin()
        } else {
            0.0
        }
    }
    fn slope_sq(&self, s: f64) -> f64 {
        if s >= 1.0 {
            return 0.0;
        }
        let u = s.sqrt();
        if u < 1e-6 {
            // sin(πu)/u → π
            return -0.25 * PI * PI;
        }
        -0.25 * PI * (PI * u).sin() / u
    }
}

/// `max(0, 1 − u²)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Quadratic;

impl Attenuation for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }
    fn default_lambda(&self) -> f64 {
        6.0
    }
    fn bounded(&self) -> bool {
        true
    }
    fn value(&self, u: f64) -> f64 {
        (1.0 - u * u).max(0.0)
    }
    fn slope(&self, u: f64) -> f64 {
        if u < 1.0 {
            -2.0 * u
        } else {
            0.0
        }
    }
    fn value_sq(&self, s: f64) -> f64 {
        (1.0 - s).max(0.0)
    }
    fn slope_sq(&self, s: f64) -> f64 {
        if s < 1.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// `max(0, 1 − u)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Linear;

impl Attenuation for Linear {
    fn name(&self) -> &'static str {
        "linear"
    }
    fn default_lambda(&self) -> f64 {
        2.5
    }
    fn bounded(&self) -> bool {
        true
    }
    fn value(&self, u: f64) -> f64 {
        (1.0 - u).max(0.0)
    }
    fn slope(&self, u: f64) -> f64 {
        // the rim keeps the interior slope
        if u <= 1.0 {
            -1.0
        } else {
            0.0
        }
    }
}

/// Name → kernel lookup table.
#[derive(Debug, Default, Clone)]
pub struct KernelRegistry {
    entries: BTreeMap<String, Arc<dyn Attenuation>>,
}

impl KernelRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The five built-in families.
    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        reg.register(Arc::new(Gaussian));
        reg.register(Arc::new(Laplacian));
        reg.register(Arc::new(RaisedCosine));
        reg.register(Arc::new(Quadratic));
        reg.register(Arc::new(Linear));
        reg
    }

    /// Adds a kernel under its own name, replacing any previous entry.
    pub fn register(&mut self, kernel: Arc<dyn Attenuation>) {
        self.entries.insert(kernel.name().to_string(), kernel);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Attenuation>> {
        self.entries.get(name).cloned().ok_or_else(|| {
            Error::config(format!(
                "unknown kernel '{name}' (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

/// Process-wide registry of the built-in kernels.
pub fn registry() -> &'static KernelRegistry {
    static REGISTRY: OnceLock<KernelRegistry> = OnceLock::new();
    REGISTRY.get_or_init(KernelRegistry::builtin)
}

pub const DEFAULT_GAUSSIAN_CUTOFF: f64 = 3.0;

/// A kernel family together with its alignment factor.
#[derive(Clone)]
pub struct KernelSpec {
    attenuation: Arc<dyn Attenuation>,
    lambda: f64,
    gaussian_cutoff: f64,
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name())
            .field("lambda", &self.lambda)
            .field("gaussian_cutoff", &self.gaussian_cutoff)
            .finish()
    }
}

impl KernelSpec {
    pub fn new(
        attenuation: Arc<dyn Attenuation>,
        lambda: Option<f64>,
        gaussian_cutoff: Option<f64>,
    ) -> Result<Self> {
        let lambda = lambda.unwrap_or_else(|| attenuation.default_lambda());
        let gaussian_cutoff = gaussian_cutoff.unwrap_or(DEFAULT_GAUSSIAN_CUTOFF);
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::config(format!("lambda must be positive, got {lambda}")));
        }
        if !(gaussian_cutoff.is_finite() && gaussian_cutoff >= 1.0) {
            return Err(Error::config(format!(
                "gaussian_cutoff must be >= 1, got {gaussian_cutoff}"
            )));
        }
        Ok(Self {
            attenuation,
            lambda,
            gaussian_cutoff,
        })
    }

    /// Looks up `name` in the built-in registry, using the family's default λ.
    pub fn named(name: &str) -> Result<Self> {
        Self::new(registry().get(name)?, None, None)
    }

    pub fn with_lambda(name: &str, lambda: f64) -> Result<Self> {
        Self::new(registry().get(name)?, Some(lambda), None)
    }

    pub fn name(&self) -> &'static str {
        self.attenuation.name()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn gaussian_cutoff(&self) -> f64 {
        self.gaussian_cutoff
    }

    pub fn attenuation(&self) -> &dyn Attenuation {
        self.attenuation.as_ref()
    }

    pub fn is_bounded(&self) -> bool {
        self.attenuation.bounded()
    }

    /// `f(d / λ)`.
    pub fn eval(&self, d: f64) -> Result<f64> {
        check_distance(d)?;
        Ok(self.attenuation.value(d / self.lambda))
    }

    /// `d f(d / λ) / dd`.
    pub fn derivative(&self, d: f64) -> Result<f64> {
        check_distance(d)?;
        Ok(self.attenuation.slope(d / self.lambda) / self.lambda)
    }

    /// Mahalanobis radius beyond which the kernel contributes nothing.
    pub fn support_radius(&self) -> f64 {
        if self.attenuation.bounded() {
            self.lambda
        } else {
            self.gaussian_cutoff * self.lambda
        }
    }

    /// Kernel value for a squared Mahalanobis distance `q = d²`, including
    /// the truncation of unbounded families. No input validation.
    #[inline]
    pub fn value_sq(&self, q: f64) -> f64 {
        let r = self.support_radius();
        if q > r * r {
            return 0.0;
        }
        self.attenuation.value_sq(q / (self.lambda * self.lambda))
    }

    /// `d value_sq(q) / dq` inside the support, 0 outside.
    #[inline]
    pub fn slope_sq(&self, q: f64) -> f64 {
        let r = self.support_radius();
        if q > r * r {
            return 0.0;
        }
        let l2 = self.lambda * self.lambda;
        self.attenuation.slope_sq(q / l2) / l2
    }

    pub fn to_config(&self) -> KernelConfig {
        KernelConfig {
            name: self.name().to_string(),
            lambda: Some(self.lambda),
            gaussian_cutoff: Some(self.gaussian_cutoff),
        }
    }
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::new(Arc::new(Linear), None, None).expect("default kernel is valid")
    }
}

/// Serializable kernel selection, as found in the `kernel` config block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_cutoff: Option<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            name: "linear".into(),
            lambda: None,
            gaussian_cutoff: None,
        }
    }
}

impl KernelConfig {
    pub fn named(name: &str) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn resolve(&self) -> Result<KernelSpec> {
        KernelSpec::new(registry().get(&self.name)?, self.lambda, self.gaussian_cutoff)
    }
}

fn check_distance(d: f64) -> Result<()> {
    if !d.is_finite() {
        return Err(Error::domain(format!("distance must be finite, got {d}")));
    }
    if d < 0.0 {
        return Err(Error::domain(format!("distance must be non-negative, got {d}")));
    }
    Ok(())
}

/// Adaptive gradient scaling weight `exp(−d²)` for a 2D Mahalanobis
/// distance.
pub fn ags_weight(d: f64) -> Result<f64> {
    if !d.is_finite() {
        return Err(Error::domain(format!("distance must be finite, got {d}")));
    }
    if d < 0.0 {
        return Err(Error::domain(format!("distance must be non-negative, got {d}")));
    }
    Ok((-d * d).exp())
}

/// [`ags_weight`] on a squared distance, unchecked, for inner loops.
#[inline]
pub fn ags_weight_sq(q: f64) -> f64 {
    (-q).exp()
}
