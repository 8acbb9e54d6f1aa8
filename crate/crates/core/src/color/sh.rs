//! Real spherical harmonics up to degree 4.
//!
//! The basis is written once over a small scalar trait so the same code
//! yields values (`f64`) and exact direction derivatives ([`Dual3`]).

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::Vector3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];
const SH_C4: [f64; 9] = [
    2.503_342_941_796_704_6,
    -1.770_130_769_779_930_4,
    0.946_174_695_757_560_1,
    -0.669_046_543_557_289_2,
    0.105_785_546_915_204_31,
    -0.669_046_543_557_289_2,
    0.473_087_347_878_780_04,
    -1.770_130_769_779_930_4,
    0.625_835_735_449_176_1,
];

/// Number of basis functions through `degree`.
pub const fn basis_len(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

pub trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Mul<f64, Output = Self> + Neg<Output = Self>
{
    fn constant(v: f64) -> Self;
}

impl Real for f64 {
    fn constant(v: f64) -> Self {
        v
    }
}

/// Forward-mode dual number carrying a gradient with respect to a 3-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual3 {
    pub v: f64,
    pub d: [f64; 3],
}

impl Dual3 {
    pub fn variable(v: f64, axis: usize) -> Self {
        let mut d = [0.0; 3];
        d[axis] = 1.0;
        Self { v, d }
    }
}

impl Add for Dual3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            v: self.v + o.v,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1], self.d[2] + o.d[2]],
        }
    }
}

impl Sub for Dual3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            v: self.v - o.v,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1], self.d[2] - o.d[2]],
        }
    }
}

impl Mul for Dual3 {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            v: self.v * o.v,
            d: [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
                self.d[2] * o.v + self.v * o.d[2],
            ],
        }
    }
}

impl Mul<f64> for Dual3 {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self {
            v: self.v * k,
            d: [self.d[0] * k, self.d[1] * k, self.d[2] * k],
        }
    }
}

impl Neg for Dual3 {
    type Output = Self;
    fn neg(self) -> Self {
        self * -1.0
    }
}

impl Real for Dual3 {
    fn constant(v: f64) -> Self {
        Self { v, d: [0.0; 3] }
    }
}

/// Writes the first `basis_len(degree)` real SH values for `(x, y, z)`.
pub fn sh_basis<T: Real>(degree: usize, x: T, y: T, z: T, out: &mut [T]) {
    assert!(degree <= 4, "SH degree {degree} not supported");
    assert!(out.len() >= basis_len(degree));
    out[0] = T::constant(SH_C0);
    if degree == 0 {
        return;
    }
    out[1] = -(y * SH_C1);
    out[2] = z * SH_C1;
    out[3] = -(x * SH_C1);
    if degree == 1 {
        return;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    out[4] = xy * SH_C2[0];
    out[5] = yz * SH_C2[1];
    out[6] = (zz * 2.0 - xx - yy) * SH_C2[2];
    out[7] = xz * SH_C2[3];
    out[8] = (xx - yy) * SH_C2[4];
    if degree == 2 {
        return;
    }
    out[9] = y * (xx * 3.0 - yy) * SH_C3[0];
    out[10] = xy * z * SH_C3[1];
    out[11] = y * (zz * 4.0 - xx - yy) * SH_C3[2];
    out[12] = z * (zz * 2.0 - xx * 3.0 - yy * 3.0) * SH_C3[3];
    out[13] = x * (zz * 4.0 - xx - yy) * SH_C3[4];
    out[14] = z * (xx - yy) * SH_C3[5];
    out[15] = x * (xx - yy * 3.0) * SH_C3[6];
    if degree == 3 {
        return;
    }
    let one = T::constant(1.0);
    out[16] = xy * (xx - yy) * SH_C4[0];
    out[17] = yz * (xx * 3.0 - yy) * SH_C4[1];
    out[18] = xy * (zz * 7.0 - one) * SH_C4[2];
    out[19] = yz * (zz * 7.0 - one * 3.0) * SH_C4[3];
    out[20] = (zz * zz * 35.0 - zz * 30.0 + one * 3.0) * SH_C4[4];
    out[21] = xz * (zz * 7.0 - one * 3.0) * SH_C4[5];
    out[22] = (xx - yy) * (zz * 7.0 - one) * SH_C4[6];
    out[23] = xz * (xx - yy * 3.0) * SH_C4[7];
    out[24] = (xx * (xx - yy * 3.0) - yy * (xx * 3.0 - yy)) * SH_C4[8];
}

/// Basis values at a direction.
pub fn basis(degree: usize, dir: &Vector3<f64>) -> Vec<f64> {
    let mut out = vec![0.0; basis_len(degree)];
    sh_basis(degree, dir.x, dir.y, dir.z, &mut out);
    out
}

/// Basis values and their Jacobian rows `∂Y_k/∂dir`.
pub fn basis_with_grad(degree: usize, dir: &Vector3<f64>) -> (Vec<f64>, Vec<Vector3<f64>>) {
    let n = basis_len(degree);
    let mut out = vec![Dual3::constant(0.0); n];
    sh_basis(
        degree,
        Dual3::variable(dir.x, 0),
        Dual3::variable(dir.y, 1),
        Dual3::variable(dir.z, 2),
        &mut out,
    );
    (
        out.iter().map(|d| d.v).collect(),
        out.iter().map(|d| Vector3::from(d.d)).collect(),
    )
}

/// Color from SH coefficients laid out as `coeffs[k * 3 + channel]`:
/// `Σ c_k·Y_k(dir) + 0.5`, clamped to `[0, 1]`.
pub fn sh_eval(degree: usize, coeffs: &[f64], dir: &Vector3<f64>) -> Vector3<f64> {
    sh_eval_raw(degree, coeffs, dir).map(|v| v.clamp(0.0, 1.0))
}

/// Unclamped SH color.
pub fn sh_eval_raw(degree: usize, coeffs: &[f64], dir: &Vector3<f64>) -> Vector3<f64> {
    let y = basis(degree, dir);
    let mut rgb = Vector3::repeat(0.5);
    for (k, yk) in y.iter().enumerate() {
        for c in 0..3 {
            rgb[c] += coeffs[k * 3 + c] * yk;
        }
    }
    rgb
}

/// Reverse-mode derivative of [`sh_eval`]: accumulates into `d_coeffs`
/// and returns `dL/ddir`. Clamped channels pass no gradient.
pub fn sh_eval_vjp(
    degree: usize,
    coeffs: &[f64],
    dir: &Vector3<f64>,
    d_rgb: &Vector3<f64>,
    d_coeffs: Option<&mut [f64]>,
) -> Vector3<f64> {
    let (y, dy) = basis_with_grad(degree, dir);
    let raw = sh_eval_raw(degree, coeffs, dir);
    let mut g = *d_rgb;
    for c in 0..3 {
        if raw[c] < 0.0 || raw[c] > 1.0 {
            g[c] = 0.0;
        }
    }
    if let Some(dc) = d_coeffs {
        for (k, yk) in y.iter().enumerate() {
            for c in 0..3 {
                dc[k * 3 + c] += g[c] * yk;
            }
        }
    }
    let mut d_dir = Vector3::zeros();
    for (k, dyk) in dy.iter().enumerate() {
        let s: f64 = (0..3).map(|c| g[c] * coeffs[k * 3 + c]).sum();
        d_dir += dyk * s;
    }
    d_dir
}
