//! Differentiable multi-kernel splatting.
//!
//! Projects anisotropic primitives to screen-space splats, composites them
//! front to back under a pluggable attenuation kernel (Gaussian, Laplacian,
//! raised cosine, quadratic, linear), and differentiates the result back to
//! every primitive parameter. Training harnesses fit flat 2D patterns and
//! small multi-view 3D scenes.

pub mod bench;
pub mod densify;
pub mod error;
pub mod geometry;
pub mod gradcheck;
pub mod gradients;
pub mod image_buf;
pub mod io;
pub mod kernel;
pub mod losses;
pub mod optim;
pub mod pattern;
pub mod raster;
pub mod sh;
pub mod train;

pub use error::{Error, Result};
pub use image_buf::Image;
pub use kernel::{Attenuation, KernelRegistry, KernelSpec};
