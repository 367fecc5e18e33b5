//! Real spherical-harmonic color evaluation up to degree 3.

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_DEGREE: usize = 3;

/// Number of coefficients (per channel) for a given degree.
pub const fn num_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Degree implied by a coefficient count, if it is a perfect square ≤ 16.
pub fn degree_for(count: usize) -> Option<usize> {
    (0..=MAX_DEGREE).find(|&d| num_coeffs(d) == count)
}

/// Basis values for the first `n` coefficients at unit direction `dir`.
pub fn basis(dir: &Vector3<f64>, n: usize) -> [f64; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    b[0] = SH_C0;
    if n > 1 {
        b[1] = -SH_C1 * y;
        b[2] = SH_C1 * z;
        b[3] = -SH_C1 * x;
    }
    if n > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = SH_C2[0] * x * y;
        b[5] = SH_C2[1] * y * z;
        b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
        b[7] = SH_C2[3] * x * z;
        b[8] = SH_C2[4] * (xx - yy);
        if n > 9 {
            b[9] = SH_C3[0] * y * (3.0 * xx - yy);
            b[10] = SH_C3[1] * x * y * z;
            b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
            b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
            b[14] = SH_C3[5] * z * (xx - yy);
            b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
        }
    }
    b
}

/// Gradients of the basis polynomials with respect to `(x, y, z)`.
pub fn basis_grad(dir: &Vector3<f64>, n: usize) -> [Vector3<f64>; 16] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut g = [Vector3::zeros(); 16];
    if n > 1 {
        g[1] = Vector3::new(0.0, -SH_C1, 0.0);
        g[2] = Vector3::new(0.0, 0.0, SH_C1);
        g[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    }
    if n > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        g[4] = SH_C2[0] * Vector3::new(y, x, 0.0);
        g[5] = SH_C2[1] * Vector3::new(0.0, z, y);
        g[6] = SH_C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z);
        g[7] = SH_C2[3] * Vector3::new(z, 0.0, x);
        g[8] = SH_C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0);
        if n > 9 {
            g[9] = SH_C3[0] * Vector3::new(6.0 * x * y, 3.0 * xx - 3.0 * yy, 0.0);
            g[10] = SH_C3[1] * Vector3::new(y * z, x * z, x * y);
            g[11] = SH_C3[2] * Vector3::new(-2.0 * x * y, 4.0 * zz - xx - 3.0 * yy, 8.0 * y * z);
            g[12] = SH_C3[3]
                * Vector3::new(-6.0 * x * z, -6.0 * y * z, 6.0 * zz - 3.0 * xx - 3.0 * yy);
            g[13] = SH_C3[4] * Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * x * y, 8.0 * x * z);
            g[14] = SH_C3[5] * Vector3::new(2.0 * x * z, -2.0 * y * z, xx - yy);
            g[15] = SH_C3[6] * Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * x * y, 0.0);
        }
    }
    g
}

/// Evaluated color before clamping: `Σ coeff_k · basis_k(dir) + 0.5`.
pub fn eval_unclamped(coeffs: &[Vector3<f64>], dir: &Vector3<f64>) -> Vector3<f64> {
    let n = coeffs.len().min(16);
    let b = basis(dir, n);
    let mut c = Vector3::repeat(0.5);
    for k in 0..n {
        c += coeffs[k] * b[k];
    }
    c
}

/// Evaluated color clamped to `[0, 1]`.
pub fn eval(coeffs: &[Vector3<f64>], dir: &Vector3<f64>) -> Vector3<f64> {
    eval_unclamped(coeffs, dir).map(|v| v.clamp(0.0, 1.0))
}

/// Base coefficient that renders as `rgb` in every direction.
pub fn rgb_to_dc(rgb: Vector3<f64>) -> Vector3<f64> {
    (rgb - Vector3::repeat(0.5)) / SH_C0
}
