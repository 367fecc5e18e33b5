//! Tile-based forward compositing of projected splats.

use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Splat2D;
use crate::image_buf::Image;
use crate::kernel::KernelSpec;

/// Scalar type of a render path.
pub trait Real:
    Copy
    + Send
    + Sync
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + AddAssign
    + MulAssign
    + std::ops::Neg<Output = Self>
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    /// Tiles and reductions in a fixed sequential order.
    #[default]
    Deterministic,
    /// Tiles processed on the rayon pool.
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub tile_size: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub transmittance_floor: f64,
    pub background: [f64; 3],
    #[serde(default)]
    pub precision: Precision,
    #[serde(default)]
    pub mode: ExecMode,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            alpha_min: 1.0 / 255.0,
            alpha_max: 0.99,
            transmittance_floor: 1e-4,
            background: [0.0; 3],
            precision: Precision::F32,
            mode: ExecMode::Deterministic,
        }
    }
}

impl RenderSettings {
    pub fn validate(&self) -> Result<()> {
        if ![8, 16, 32].contains(&self.tile_size) {
            return Err(Error::config(format!(
                "tile_size must be 8, 16 or 32, got {}",
                self.tile_size
            )));
        }
        if !(0.0 < self.alpha_min && self.alpha_min < self.alpha_max && self.alpha_max < 1.0) {
            return Err(Error::config("need 0 < alpha_min < alpha_max < 1"));
        }
        if !(0.0 < self.transmittance_floor && self.transmittance_floor < 1.0) {
            return Err(Error::config("need 0 < transmittance_floor < 1"));
        }
        if !self.background.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::config("background must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Per-tile splat lists, each ordered by `(depth, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub lists: Vec<Vec<u32>>,
}

impl TileBins {
    pub fn tile_of(&self, x: usize, y: usize) -> usize {
        (y / self.tile_size) * self.tiles_x + x / self.tile_size
    }

    /// Pixel rectangle `[x0, x1) × [y0, y1)` of a tile, clipped to the image.
    pub fn tile_rect(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, (x0 + self.tile_size).min(width), y0, (y0 + self.tile_size).min(height))
    }
}

/// Whether the closed disc `(center, radius)` meets the rectangle.
pub fn disc_meets_rect(cx: f64, cy: f64, radius: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> bool {
    let nx = cx.clamp(x0, x1);
    let ny = cy.clamp(y0, y1);
    let dx = cx - nx;
    let dy = cy - ny;
    dx * dx + dy * dy <= radius * radius
}

/// Whether some point of the rectangle has `a·dx² + 2b·dx·dy + c·dy² ≤ q_max`
/// with `d` measured from `(cx, cy)`. Conservative by a relative 1e-9 so
/// rounding never drops a pixel the per-pixel test would keep.
#[allow(clippy::too_many_arguments)]
pub fn ellipse_meets_rect(
    cx: f64,
    cy: f64,
    conic: [f64; 3],
    q_max: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
) -> bool {
    let [a, b, c] = conic;
    let (u0, u1, v0, v1) = (x0 - cx, x1 - cx, y0 - cy, y1 - cy);
    if u0 <= 0.0 && 0.0 <= u1 && v0 <= 0.0 && 0.0 <= v1 {
        return true;
    }
    if !(a > 0.0 && c > 0.0 && a * c - b * b > 0.0) {
        return true;
    }
    let q = |u: f64, v: f64| a * u * u + 2.0 * b * u * v + c * v * v;
    let mut best = f64::INFINITY;
    for u in [u0, u1] {
        let v = (-b * u / c).clamp(v0, v1);
        best = best.min(q(u, v));
    }
    for v in [v0, v1] {
        let u = (-b * v / a).clamp(u0, u1);
        best = best.min(q(u, v));
    }
    best <= q_max * (1.0 + 1e-9) + 1e-12
}

/// Global `(depth, index)` order of the splats.
pub fn depth_order(splats: &[Splat2D]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..splats.len() as u32).collect();
    order.sort_by(|&a, &b| {
        splats[a as usize]
            .depth
            .total_cmp(&splats[b as usize].depth)
            .then(a.cmp(&b))
    });
    order
}

/// Bins splats into tiles. A splat lands in a tile when its radius disc
/// meets the tile and its support ellipse `q ≤ support²` reaches one of the
/// tile's pixel centers.
pub fn bin_splats(
    splats: &[Splat2D],
    support: f64,
    tile_size: usize,
    width: usize,
    height: usize,
) -> TileBins {
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    let ts = tile_size as f64;
    let q_max = support * support;
    for idx in depth_order(splats) {
        let s = &splats[idx as usize];
        let (mx, my, r) = (s.mean2d.x, s.mean2d.y, s.radius_px);
        if !(mx.is_finite() && my.is_finite() && r.is_finite()) {
            continue;
        }
        let conic = conic_terms(&s.conic);
        let tx0 = ((mx - r) / ts).floor().max(0.0) as usize;
        let ty0 = ((my - r) / ts).floor().max(0.0) as usize;
        let tx1 = (((mx + r) / ts).floor().max(-1.0) as isize).min(tiles_x as isize - 1);
        let ty1 = (((my + r) / ts).floor().max(-1.0) as isize).min(tiles_y as isize - 1);
        if tx1 < 0 || ty1 < 0 {
            continue;
        }
        for ty in ty0..=ty1 as usize {
            for tx in tx0..=tx1 as usize {
                let x0 = (tx * tile_size) as f64;
                let y0 = (ty * tile_size) as f64;
                let x1 = ((tx + 1) * tile_size).min(width) as f64;
                let y1 = ((ty + 1) * tile_size).min(height) as f64;
                if disc_meets_rect(mx, my, r, x0, x1, y0, y1)
                    && ellipse_meets_rect(mx, my, conic, q_max, x0 + 0.5, x1 - 0.5, y0 + 0.5, y1 - 0.5)
                {
                    lists[ty * tiles_x + tx].push(idx);
                }
            }
        }
    }
    TileBins {
        tile_size,
        tiles_x,
        tiles_y,
        lists,
    }
}

fn conic_terms(conic: &nalgebra::Matrix2<f64>) -> [f64; 3] {
    [conic[(0, 0)], 0.5 * (conic[(0, 1)] + conic[(1, 0)]), conic[(1, 1)]]
}

/// Result of a forward render plus the state the backward pass needs.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub final_transmittance: Vec<f64>,
    /// Accepted (non-skipped) contributors per pixel.
    pub contributor_count: Vec<u32>,
    /// One past the tile-list position of the last accepted contributor.
    pub last_contributor: Vec<u32>,
    pub bins: TileBins,
    pub precision: Precision,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}

/// A splat converted to the working precision.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PreparedSplat<T> {
    pub mx: f64,
    pub my: f64,
    pub r2: f64,
    pub conic64: [f64; 3],
    pub q_max: f64,
    pub a: T,
    pub b: T,
    pub c: T,
    pub color: [T; 3],
    pub opacity: T,
}

pub(crate) fn prepare<T: Real>(splats: &[Splat2D], spec: &KernelSpec) -> Vec<PreparedSplat<T>> {
    let q_max = spec.support_radius().powi(2);
    splats
        .iter()
        .map(|s| PreparedSplat {
            mx: s.mean2d.x,
            my: s.mean2d.y,
            r2: s.radius_px * s.radius_px,
            conic64: conic_terms(&s.conic),
            q_max,
            a: T::from_f64(s.conic[(0, 0)]),
            b: T::from_f64(0.5 * (s.conic[(0, 1)] + s.conic[(1, 0)])),
            c: T::from_f64(s.conic[(1, 1)]),
            color: [
                T::from_f64(s.color.x),
                T::from_f64(s.color.y),
                T::from_f64(s.color.z),
            ],
            opacity: T::from_f64(s.opacity),
        })
        .collect()
}

/// Per-pixel sample of one splat.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Sample<T> {
    pub dx: T,
    pub dy: T,
    pub q: T,
    pub kernel: T,
    pub alpha: T,
    /// `opacity · kernel` exceeded `alpha_max`.
    pub clamped: bool,
}

/// Evaluates `splat` at pixel center `(px, py)`. `None` when the splat is
/// skipped for this pixel.
#[inline]
pub(crate) fn sample<T: Real>(
    s: &PreparedSplat<T>,
    px: f64,
    py: f64,
    spec: &KernelSpec,
    alpha_min: T,
    alpha_max: T,
) -> Option<Sample<T>> {
    let ddx = px - s.mx;
    let ddy = py - s.my;
    if ddx * ddx + ddy * ddy > s.r2 {
        return None;
    }
    let [a, b, c] = s.conic64;
    if a * ddx * ddx + 2.0 * b * ddx * ddy + c * ddy * ddy > s.q_max {
        return None;
    }
    let dx = T::from_f64(ddx);
    let dy = T::from_f64(ddy);
    let q = s.a * dx * dx + (s.b + s.b) * dx * dy + s.c * dy * dy;
    let kernel = T::from_f64(spec.value_sq(q.to_f64().max(0.0)));
    let raw = s.opacity * kernel;
    let clamped = raw > alpha_max;
    let alpha = if clamped { alpha_max } else { raw };
    if alpha < alpha_min {
        return None;
    }
    Some(Sample {
        dx,
        dy,
        q,
        kernel,
        alpha,
        clamped,
    })
}

struct PixelResult {
    color: [f64; 3],
    transmittance: f64,
    count: u32,
    last: u32,
}

fn render_tile<T: Real>(
    tile: usize,
    bins: &TileBins,
    prepared: &[PreparedSplat<T>],
    spec: &KernelSpec,
    settings: &RenderSettings,
    width: usize,
    height: usize,
) -> Vec<(usize, PixelResult)> {
    let (x0, x1, y0, y1) = bins.tile_rect(tile, width, height);
    let list = &bins.lists[tile];
    let alpha_min = T::from_f64(settings.alpha_min);
    let alpha_max = T::from_f64(settings.alpha_max);
    let floor = T::from_f64(settings.transmittance_floor);
    let bg = settings.background.map(T::from_f64);
    let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
    for y in y0..y1 {
        for x in x0..x1 {
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let mut t = T::ONE;
            let mut c = [T::ZERO; 3];
            let mut count = 0u32;
            let mut last = 0u32;
            for (k, &si) in list.iter().enumerate() {
                let s = &prepared[si as usize];
                let Some(smp) = sample(s, px, py, spec, alpha_min, alpha_max) else {
                    continue;
                };
                let w = smp.alpha * t;
                for ch in 0..3 {
                    c[ch] += s.color[ch] * w;
                }
                t *= T::ONE - smp.alpha;
                count += 1;
                last = k as u32 + 1;
                if t < floor {
                    break;
                }
            }
            for ch in 0..3 {
                c[ch] += t * bg[ch];
            }
            out.push((
                y * width + x,
                PixelResult {
                    color: c.map(T::to_f64),
                    transmittance: t.to_f64(),
                    count,
                    last,
                },
            ));
        }
    }
    out
}

fn rasterize_with<T: Real>(
    splats: &[Splat2D],
    spec: &KernelSpec,
    settings: &RenderSettings,
    width: usize,
    height: usize,
) -> RenderOutput {
    let bins = bin_splats(splats, spec.support_radius(), settings.tile_size, width, height);
    let prepared = prepare::<T>(splats, spec);
    let n_tiles = bins.lists.len();
    let tiles: Vec<Vec<(usize, PixelResult)>> = match settings.mode {
        ExecMode::Deterministic => (0..n_tiles)
            .map(|t| render_tile(t, &bins, &prepared, spec, settings, width, height))
            .collect(),
        ExecMode::Parallel => (0..n_tiles)
            .into_par_iter()
            .map(|t| render_tile(t, &bins, &prepared, spec, settings, width, height))
            .collect(),
    };
    let mut image = Image::new(width, height);
    let mut final_transmittance = vec![1.0; width * height];
    let mut contributor_count = vec![0; width * height];
    let mut last_contributor = vec![0; width * height];
    for tile in tiles {
        for (i, px) in tile {
            image.data_mut()[i * 3..i * 3 + 3].copy_from_slice(&px.color);
            final_transmittance[i] = px.transmittance;
            contributor_count[i] = px.count;
            last_contributor[i] = px.last;
        }
    }
    RenderOutput {
        image,
        final_transmittance,
        contributor_count,
        last_contributor,
        bins,
        precision: settings.precision,
    }
}

/// Composites `splats` front to back into a `width × height` image.
pub fn rasterize(
    splats: &[Splat2D],
    spec: &KernelSpec,
    settings: &RenderSettings,
    width: usize,
    height: usize,
) -> Result<RenderOutput> {
    settings.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::config(format!("invalid image size {width}x{height}")));
    }
    if let Some(s) = splats.iter().find(|s| !s.depth.is_finite()) {
        return Err(Error::domain(format!("non-finite splat depth {}", s.depth)));
    }
    Ok(match settings.precision {
        Precision::F32 => rasterize_with::<f32>(splats, spec, settings, width, height),
        Precision::F64 => rasterize_with::<f64>(splats, spec, settings, width, height),
    })
}
