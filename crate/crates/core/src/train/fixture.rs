//! Synthetic multi-view scenes rendered by this crate's own forward pass.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fit3d::render_view;
use crate::densify::scene_extent;
use crate::error::Result;
use crate::geometry::{logit, Camera, Primitive3D};
use crate::io::{Dataset, SeedPoint};
use crate::kernel::KernelSpec;
use crate::raster::RenderSettings;
use crate::sh;

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub seed: u64,
    pub primitives: usize,
    pub cameras: usize,
    pub size: usize,
    /// Seed points are the true means offset by up to this fraction of the
    /// scene extent per axis.
    pub jitter: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            primitives: 50,
            cameras: 8,
            size: 64,
            jitter: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub truth: Vec<Primitive3D>,
    pub data: Dataset,
}

/// Cameras on a ring of radius 4 around the origin, alternating slightly
/// above and below the equator.
pub fn ring_cameras(count: usize, size: usize) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / count as f64;
            let y = if i % 2 == 0 { 0.6 } else { -0.6 };
            Camera::look_at(
                Vector3::new(4.0 * a.sin(), y, -4.0 * a.cos()),
                Vector3::zeros(),
                Vector3::new(0.0, -1.0, 0.0),
                size as f64 * 1.1,
                size,
                size,
            )
        })
        .collect()
}

/// Ground-truth primitives inside the unit ball, rendered from a camera
/// ring with `spec`; seed points are the jittered true means.
pub fn synthetic_fixture(fs: &FixtureSpec, spec: &KernelSpec, settings: &RenderSettings) -> Result<Fixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(fs.seed);
    let mut truth = Vec::with_capacity(fs.primitives);
    while truth.len() < fs.primitives {
        let m = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if m.norm() > 1.0 {
            continue;
        }
        let q = Vector4::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut shc = vec![Vector3::zeros(); sh::num_coeffs(0)];
        shc[0] = sh::rgb_to_dc(Vector3::new(rng.random_range(0.05..0.95), rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)));
        truth.push(Primitive3D {
            mean: 0.8 * m,
            log_scale: Vector3::new(rng.random_range(-2.5..-1.6), rng.random_range(-2.5..-1.6), rng.random_range(-2.5..-1.6)),
            rotation: if q.norm() > 0.1 { q.normalize() } else { Vector4::new(1.0, 0.0, 0.0, 0.0) },
            opacity_logit: logit(rng.random_range(0.6..0.95)),
            sh: shc,
        });
    }
    let cameras = ring_cameras(fs.cameras, fs.size);
    let images = cameras
        .iter()
        .map(|c| render_view(&truth, c, spec, settings))
        .collect::<Result<Vec<_>>>()?;
    let extent = scene_extent(&truth.iter().map(|p| p.mean).collect::<Vec<_>>());
    let j = fs.jitter * extent;
    let points = truth
        .iter()
        .map(|p| SeedPoint {
            position: p.mean + Vector3::new(rng.random_range(-j..=j), rng.random_range(-j..=j), rng.random_range(-j..=j)),
            color: None,
        })
        .collect();
    Ok(Fixture {
        truth,
        data: Dataset {
            cameras,
            images,
            points: Some(points),
            random_init: None,
            extent_override: None,
        },
    })
}
