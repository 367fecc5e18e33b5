//! Procedural test patterns, looked up by name.
//!
//! A pattern name is a family plus an optional integer parameter:
//! `stripes8` is vertical stripes of period 8 px, `checker4` a checkerboard
//! with 4 px cells, `circles6` concentric rings 6 px wide. `testcard` and
//! `radial` take no parameter.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use crate::error::{Error, Result};
use crate::image_buf::Image;

pub const MIN_SIZE: usize = 32;

pub trait Pattern: Send + Sync + fmt::Debug {
    fn name(&self) -> String;

    /// Value at pixel `(x, y)` of a `size × size` image.
    fn sample(&self, x: usize, y: usize, size: usize) -> [f64; 3];
}

/// Vertical stripes, white first: columns with `x mod period < period / 2`
/// are white.
#[derive(Debug, Clone, Copy)]
pub struct Stripes {
    pub period: usize,
}

impl Pattern for Stripes {
    fn name(&self) -> String {
        format!("stripes{}", self.period)
    }

    fn sample(&self, x: usize, _y: usize, _size: usize) -> [f64; 3] {
        let v = if 2 * (x % self.period) < self.period { 1.0 } else { 0.0 };
        [v; 3]
    }
}

/// Cells of `cell` pixels; value is the parity of `⌊x/cell⌋ + ⌊y/cell⌋`.
#[derive(Debug, Clone, Copy)]
pub struct Checker {
    pub cell: usize,
}

impl Pattern for Checker {
    fn name(&self) -> String {
        format!("checker{}", self.cell)
    }

    fn sample(&self, x: usize, y: usize, _size: usize) -> [f64; 3] {
        [((x / self.cell + y / self.cell) % 2) as f64; 3]
    }
}

/// Concentric rings about the image centre, white innermost.
#[derive(Debug, Clone, Copy)]
pub struct Circles {
    pub ring_width: usize,
}

fn centre_distance(x: usize, y: usize, size: usize) -> f64 {
    let c = size as f64 / 2.0;
    ((x as f64 + 0.5 - c).powi(2) + (y as f64 + 0.5 - c).powi(2)).sqrt()
}

impl Pattern for Circles {
    fn name(&self) -> String {
        format!("circles{}", self.ring_width)
    }

    fn sample(&self, x: usize, y: usize, size: usize) -> [f64; 3] {
        let ring = (centre_distance(x, y, size) / self.ring_width as f64).floor() as usize;
        [if ring % 2 == 0 { 1.0 } else { 0.0 }; 3]
    }
}

/// Smooth color ramp with distance from the centre.
#[derive(Debug, Clone, Copy)]
pub struct RadialGradient;

impl Pattern for RadialGradient {
    fn name(&self) -> String {
        "radial".into()
    }

    fn sample(&self, x: usize, y: usize, size: usize) -> [f64; 3] {
        let t = (centre_distance(x, y, size) / (size as f64 * std::f64::consts::FRAC_1_SQRT_2)).min(1.0);
        [1.0 - t, 0.3 + 0.4 * t, t]
    }
}

/// Bar colors of [`TestCard`], left to right.
pub const TESTCARD_BARS: [[f64; 3]; 8] = [
    [1.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
    [0.0, 1.0, 0.0],
    [1.0, 0.0, 1.0],
    [1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, 0.0],
];

/// Grating periods in the middle band, left to right.
pub const TESTCARD_GRATINGS: [usize; 5] = [2, 3, 4, 6, 8];

/// Composite card on a gray background with a white grid and a centred
/// circle. Rows `[h/8, 3h/8)` hold eight color bars, rows `[3h/8, 5h/8)`
/// five vertical gratings, rows `[5h/8, 7h/8)` an eight-step gray ramp.
/// Bars are drawn last; [`testcard_bar_probe`] gives a pixel inside bar `k`.
#[derive(Debug, Clone, Copy)]
pub struct TestCard;

pub fn testcard_bar_probe(size: usize, k: usize) -> (usize, usize) {
    ((2 * k + 1) * size / 16, size / 4)
}

impl Pattern for TestCard {
    fn name(&self) -> String {
        "testcard".into()
    }

    fn sample(&self, x: usize, y: usize, size: usize) -> [f64; 3] {
        let band = 8 * y / size;
        if (1..3).contains(&band) {
            return TESTCARD_BARS[(8 * x / size).min(7)];
        }
        let r = centre_distance(x, y, size);
        if (r - 0.4 * size as f64).abs() < 1.0 {
            return [1.0; 3];
        }
        if (3..5).contains(&band) {
            let col = (5 * x / size).min(4);
            let p = TESTCARD_GRATINGS[col];
            return [if 2 * (x % p) < p { 1.0 } else { 0.0 }; 3];
        }
        if (5..7).contains(&band) {
            let step = (8 * x / size).min(7);
            return [step as f64 / 7.0; 3];
        }
        let grid = (size / 16).max(1);
        if x % grid == 0 || y % grid == 0 {
            [1.0; 3]
        } else {
            [0.5; 3]
        }
    }
}

type Factory = fn(Option<usize>) -> Result<Arc<dyn Pattern>>;

fn positive(name: &str, p: Option<usize>, default: usize) -> Result<usize> {
    match p.unwrap_or(default) {
        0 => Err(Error::config(format!("{name} parameter must be positive"))),
        v => Ok(v),
    }
}

fn no_param(name: &str, p: Option<usize>) -> Result<()> {
    match p {
        None => Ok(()),
        Some(_) => Err(Error::config(format!("pattern {name} takes no parameter"))),
    }
}

pub struct PatternRegistry {
    families: BTreeMap<&'static str, Factory>,
}

impl fmt::Debug for PatternRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.families.keys()).finish()
    }
}

impl PatternRegistry {
    pub fn builtin() -> Self {
        let mut r = Self {
            families: BTreeMap::new(),
        };
        r.register("stripes", |p| Ok(Arc::new(Stripes { period: positive("stripes", p, 8)? })));
        r.register("checker", |p| Ok(Arc::new(Checker { cell: positive("checker", p, 8)? })));
        r.register("circles", |p| {
            Ok(Arc::new(Circles {
                ring_width: positive("circles", p, 4)?,
            }))
        });
        r.register("radial", |p| {
            no_param("radial", p)?;
            Ok(Arc::new(RadialGradient))
        });
        r.register("testcard", |p| {
            no_param("testcard", p)?;
            Ok(Arc::new(TestCard))
        });
        r
    }

    pub fn register(&mut self, family: &'static str, factory: Factory) {
        self.families.insert(family, factory);
    }

    pub fn families(&self) -> Vec<&'static str> {
        self.families.keys().copied().collect()
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Pattern>> {
        let split = name.find(|c: char| c.is_ascii_digit()).unwrap_or(name.len());
        let (family, digits) = name.split_at(split);
        let param = if digits.is_empty() {
            None
        } else {
            Some(
                digits
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad pattern parameter in {name:?}")))?,
            )
        };
        let factory = self.families.get(family).ok_or_else(|| {
            Error::config(format!("unknown pattern {name:?} (known: {})", self.families().join(", ")))
        })?;
        factory(param)
    }
}

pub fn registry() -> &'static PatternRegistry {
    static REG: OnceLock<PatternRegistry> = OnceLock::new();
    REG.get_or_init(PatternRegistry::builtin)
}

pub fn render(pattern: &dyn Pattern, size: usize) -> Result<Image> {
    if size < MIN_SIZE {
        return Err(Error::config(format!("pattern size must be at least {MIN_SIZE}, got {size}")));
    }
    Ok(Image::from_fn(size, size, |x, y| pattern.sample(x, y, size)))
}

/// Renders the named pattern at `size × size`.
pub fn generate_pattern(name: &str, size: usize) -> Result<Image> {
    render(registry().get(name)?.as_ref(), size)
}

/// Default pattern set of the kernel study.
pub const STUDY_PATTERNS: [&str; 4] = ["stripes8", "checker8", "circles4", "testcard"];
