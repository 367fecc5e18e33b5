//! JSON scene manifests: cameras with images plus an optional seed cloud.
//!
//! Relative paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Camera, CameraRecord};
use crate::image_buf::Image;
use crate::io::ply::{load_points, save_points, SeedPoint};
use crate::io::png::{load_png, save_png};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCamera {
    #[serde(flatten)]
    pub camera: CameraRecord,
    pub image_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub cameras: Vec<ManifestCamera>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_init: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extent_override: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<Image>,
    pub points: Option<Vec<SeedPoint>>,
    pub random_init: Option<usize>,
    pub extent_override: Option<f64>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.cameras.len() != self.images.len() {
            return Err(Error::config(format!(
                "{} cameras but {} images",
                self.cameras.len(),
                self.images.len()
            )));
        }
        if self.cameras.len() < 2 {
            return Err(Error::config(format!("need at least 2 cameras, got {}", self.cameras.len())));
        }
        for (i, (c, img)) in self.cameras.iter().zip(&self.images).enumerate() {
            if (c.width, c.height) != img.dims() {
                return Err(Error::config(format!(
                    "camera {i} is {}x{} but its image is {}x{}",
                    c.width,
                    c.height,
                    img.width(),
                    img.height()
                )));
            }
        }
        if self.random_init == Some(0) {
            return Err(Error::config("random_init must be at least 1"));
        }
        if self.points.is_none() && self.random_init.is_none() {
            return Err(Error::config("dataset needs seed points or random_init"));
        }
        if let Some(e) = self.extent_override {
            if !(e.is_finite() && e > 0.0) {
                return Err(Error::config("extent_override must be positive"));
            }
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn read_manifest(path: &Path) -> Result<SceneManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let m: SceneManifest = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
    if m.cameras.is_empty() {
        return Err(Error::parse(path, "camera list is empty"));
    }
    Ok(m)
}

/// Loads the manifest, its images and seed points.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let m = read_manifest(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut cameras = Vec::with_capacity(m.cameras.len());
    let mut images = Vec::with_capacity(m.cameras.len());
    for (i, c) in m.cameras.iter().enumerate() {
        let cam = c
            .camera
            .to_camera()
            .map_err(|e| Error::parse(path, format!("camera {i}: {e}")))?;
        let img_path = resolve(base, &c.image_path);
        if !img_path.exists() {
            return Err(Error::parse(path, format!("camera {i}: missing image {}", img_path.display())));
        }
        let img = load_png(&img_path)?;
        if img.dims() != (cam.width, cam.height) {
            return Err(Error::parse(
                path,
                format!(
                    "camera {i}: declared {}x{} but {} is {}x{}",
                    cam.width,
                    cam.height,
                    img_path.display(),
                    img.width(),
                    img.height()
                ),
            ));
        }
        cameras.push(cam);
        images.push(img);
    }
    let points = match &m.points {
        Some(p) => Some(load_points(&resolve(base, p))?),
        None => None,
    };
    Ok(Dataset {
        cameras,
        images,
        points,
        random_init: m.random_init,
        extent_override: m.extent_override,
    })
}

/// Writes images as `view_NNN.png`, seed points as `points.ply` and the
/// manifest as `scene.json` inside `dir`. Returns the manifest path.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut cams = Vec::with_capacity(data.cameras.len());
    for (i, (c, img)) in data.cameras.iter().zip(&data.images).enumerate() {
        let name = PathBuf::from(format!("view_{i:03}.png"));
        save_png(&dir.join(&name), img)?;
        cams.push(ManifestCamera {
            camera: CameraRecord::from_camera(c),
            image_path: name,
        });
    }
    let points = match &data.points {
        Some(p) => {
            save_points(&dir.join("points.ply"), p)?;
            Some(PathBuf::from("points.ply"))
        }
        None => None,
    };
    let m = SceneManifest {
        cameras: cams,
        points,
        random_init: data.random_init,
        extent_override: data.extent_override,
    };
    let path = dir.join("scene.json");
    let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
