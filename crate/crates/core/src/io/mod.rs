//! File formats.

pub mod manifest;
pub mod ply;
pub mod png;
pub mod raw;
pub mod runlog;

pub use manifest::{load_dataset, read_manifest, write_dataset, Dataset, ManifestCamera, SceneManifest};
pub use ply::{load_ply, load_points, save_ply, save_ply_as, save_points, PlyScalar, SeedPoint};
pub use png::{load_png, quantize, save_png};
pub use raw::{load_raw, save_raw};
pub use runlog::{write_run_config, RunLog};
