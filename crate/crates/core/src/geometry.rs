//! Primitive parameterization, cameras, and the 3D → 2D projection chain.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::sh;

/// Primitives closer than this (camera z) are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Added to the diagonal of every 2D covariance before inversion, pixel².
pub const COV2D_FLOOR: f64 = 0.3;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// One 3D splat.
#[derive(Debug, Clone, PartialEq)]
pub struct Primitive3D {
    pub mean: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    /// Quaternion stored as `(w, x, y, z)`.
    pub rotation: Vector4<f64>,
    pub opacity_logit: f64,
    /// Spherical-harmonic coefficients, `(degree + 1)²` entries.
    pub sh: Vec<Vector3<f64>>,
}

impl Primitive3D {
    pub fn isotropic(mean: Vector3<f64>, scale: f64, opacity: f64, rgb: Vector3<f64>, degree: usize) -> Self {
        let mut sh = vec![Vector3::zeros(); sh::num_coeffs(degree)];
        sh[0] = sh::rgb_to_dc(rgb);
        Self {
            mean,
            log_scale: Vector3::repeat(scale.ln()),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: logit(opacity),
            sh,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn sh_degree(&self) -> usize {
        sh::degree_for(self.sh.len()).unwrap_or(0)
    }

    /// Unit vector from the camera center towards the mean.
    pub fn view_dir(&self, camera: &Camera) -> Vector3<f64> {
        let v = self.mean - camera.center();
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            Vector3::z()
        }
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.norm();
        if n > 0.0 && n.is_finite() {
            self.rotation /= n;
        } else {
            self.rotation = Vector4::new(1.0, 0.0, 0.0, 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the (unit) quaternion.
pub fn quat_matrix_grad(q: &Vector4<f64>, dr: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let g = |r: usize, c: usize| dr[(r, c)];
    let dw = -z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1);
    let dx = y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2)
        + z * g(2, 0)
        + w * g(2, 1)
        - 2.0 * x * g(2, 2);
    let dy = -2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2)
        - w * g(2, 0)
        + z * g(2, 1)
        - 2.0 * y * g(2, 2);
    let dz = -2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
        + y * g(1, 2)
        + x * g(2, 0)
        + y * g(2, 1);
    2.0 * Vector4::new(dw, dx, dy, dz)
}

/// `R · diag(exp(log_scale))² · Rᵀ`. The quaternion is renormalized first.
pub fn covariance_from_params(log_scale: &Vector3<f64>, rotation: &Vector4<f64>) -> Result<Matrix3<f64>> {
    if !log_scale.iter().chain(rotation.iter()).all(|v| v.is_finite()) {
        return Err(Error::domain("non-finite scale or rotation"));
    }
    let n = rotation.norm();
    if n == 0.0 {
        return Err(Error::domain("zero quaternion"));
    }
    let r = quat_to_matrix(&(rotation / n));
    let s2 = log_scale.map(|v| (2.0 * v).exp());
    Ok(r * Matrix3::from_diagonal(&s2) * r.transpose())
}

/// Pinhole camera with a rigid world-to-camera transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub world_to_camera: Matrix4<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self, tol: f64) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::config("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("camera dimensions must be positive"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::config("principal point outside the image"));
        }
        let r = self.rotation();
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if !(err <= tol) {
            return Err(Error::config(format!(
                "world_to_camera rotation is not orthonormal (deviation {err:.3e})"
            )));
        }
        let last = self.world_to_camera.row(3);
        if (last - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).abs().max() > tol {
            return Err(Error::config("world_to_camera last row must be (0, 0, 0, 1)"));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.world_to_camera.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.world_to_camera.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Camera at `eye` looking at `target`; camera +z forward, +y down.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>, focal: f64, width: usize, height: usize) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&up).normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let t = -(r * eye);
        let mut w2c = Matrix4::identity();
        w2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        w2c.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
        Self {
            world_to_camera: w2c,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }
}

/// Local affine approximation of the perspective projection at a
/// camera-space point, or `None` when the point is behind the near plane.
pub fn projection_jacobian(camera: &Camera, mean_cam: &Vector3<f64>) -> Option<Matrix2x3<f64>> {
    let (x, y, z) = (mean_cam.x, mean_cam.y, mean_cam.z);
    if !(z > NEAR_PLANE) {
        return None;
    }
    let z2 = z * z;
    Some(Matrix2x3::new(
        camera.fx / z,
        0.0,
        -camera.fx * x / z2,
        0.0,
        camera.fy / z,
        -camera.fy * y / z2,
    ))
}

/// Screen-space footprint of one splat.
#[derive(Debug, Clone, PartialEq)]
pub struct Splat2D {
    pub mean2d: Vector2<f64>,
    /// Inverse of the floored 2D covariance.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub radius_px: f64,
    pub color: Vector3<f64>,
    pub opacity: f64,
}

/// Floors, inverts, and bounds a 2D covariance. `None` if the footprint
/// misses the `width × height` viewport.
pub fn splat_from_cov2d(
    mean2d: Vector2<f64>,
    cov2d: &Matrix2<f64>,
    depth: f64,
    color: Vector3<f64>,
    opacity: f64,
    spec: &KernelSpec,
    width: usize,
    height: usize,
) -> Result<Option<Splat2D>> {
    let cov = cov2d + Matrix2::identity() * COV2D_FLOOR;
    let (a, b, c) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return Err(Error::Internal(format!("singular 2D covariance (det {det})")));
    }
    let conic = Matrix2::new(c / det, -b / det, -b / det, a / det);
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius_px = spec.support_radius() * lambda_max.sqrt();
    let (w, h) = (width as f64, height as f64);
    if mean2d.x + radius_px < 0.0
        || mean2d.x - radius_px > w
        || mean2d.y + radius_px < 0.0
        || mean2d.y - radius_px > h
    {
        return Ok(None);
    }
    Ok(Some(Splat2D {
        mean2d,
        conic,
        depth,
        radius_px,
        color,
        opacity,
    }))
}

/// Projects a primitive for one camera. Color is evaluated for `view_dir`.
pub fn project_primitive(
    p: &Primitive3D,
    camera: &Camera,
    spec: &KernelSpec,
    view_dir: &Vector3<f64>,
) -> Result<Option<Splat2D>> {
    let w = camera.rotation();
    let mean_cam = camera.to_camera(&p.mean);
    let Some(j) = projection_jacobian(camera, &mean_cam) else {
        return Ok(None);
    };
    let cov3 = covariance_from_params(&p.log_scale, &p.rotation)?;
    let t = j * w;
    let cov2d = t * cov3 * t.transpose();
    let mean2d = Vector2::new(
        camera.fx * mean_cam.x / mean_cam.z + camera.cx,
        camera.fy * mean_cam.y / mean_cam.z + camera.cy,
    );
    let color = sh::eval(&p.sh, view_dir);
    splat_from_cov2d(
        mean2d,
        &cov2d,
        mean_cam.z,
        color,
        p.opacity(),
        spec,
        camera.width,
        camera.height,
    )
}

/// `sqrt(dᵀ · conic · d)` with `d = x − mean2d`.
pub fn mahalanobis_2d(conic: &Matrix2<f64>, x: &Vector2<f64>, mean2d: &Vector2<f64>) -> f64 {
    let d = x - mean2d;
    (d.transpose() * conic * d)[(0, 0)].max(0.0).sqrt()
}

/// Splats visible from one camera with their source primitive indices.
#[derive(Debug, Clone, Default)]
pub struct ProjectedScene {
    pub splats: Vec<Splat2D>,
    pub source: Vec<usize>,
}

pub fn project_scene(prims: &[Primitive3D], camera: &Camera, spec: &KernelSpec) -> Result<ProjectedScene> {
    let mut out = ProjectedScene::default();
    for (i, p) in prims.iter().enumerate() {
        if let Some(s) = project_primitive(p, camera, spec, &p.view_dir(camera))? {
            out.splats.push(s);
            out.source.push(i);
        }
    }
    Ok(out)
}

/// Serializable camera record (row-major 4×4 transform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraRecord {
    pub world_to_camera: Vec<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraRecord {
    pub fn to_camera(&self) -> Result<Camera> {
        if self.world_to_camera.len() != 16 {
            return Err(Error::config(format!(
                "world_to_camera must have 16 entries, got {}",
                self.world_to_camera.len()
            )));
        }
        let cam = Camera {
            world_to_camera: Matrix4::from_row_slice(&self.world_to_camera),
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        };
        cam.validate(1e-4)?;
        Ok(cam)
    }

    pub fn from_camera(cam: &Camera) -> Self {
        let mut m = Vec::with_capacity(16);
        for r in 0..4 {
            for c in 0..4 {
                m.push(cam.world_to_camera[(r, c)]);
            }
        }
        Self {
            world_to_camera: m,
            fx: cam.fx,
            fy: cam.fy,
            cx: cam.cx,
            cy: cam.cy,
            width: cam.width,
            height: cam.height,
        }
    }
}
