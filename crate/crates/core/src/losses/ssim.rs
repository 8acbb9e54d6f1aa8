//! Structural similarity with an 11×11 Gaussian window (σ = 1.5),
//! zero-padded "same" filtering, averaged over pixels and channels.

use nalgebra::Vector3;

use crate::error::Result;
use crate::raster::ImageBuffer;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

pub fn gaussian_window() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let r = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable zero-padded filtering. The window is symmetric, so this is
/// also its own adjoint.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xs = x as isize + t as isize - r;
                if xs >= 0 && (xs as usize) < w {
                    acc += kv * src[y * w + xs as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let ys = y as isize + t as isize - r;
                if ys >= 0 && (ys as usize) < h {
                    acc += kv * tmp[ys as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM of one channel and, optionally, its gradient w.r.t. `a`.
fn channel(a: &[f64], b: &[f64], w: usize, h: usize, grad: bool) -> (f64, Option<Vec<f64>>) {
    let k = gaussian_window();
    let mul = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let mu_a = blur(a, w, h, &k);
    let mu_b = blur(b, w, h, &k);
    let m_aa = blur(&mul(a, a), w, h, &k);
    let m_bb = blur(&mul(b, b), w, h, &k);
    let m_ab = blur(&mul(a, b), w, h, &k);
    let n = (w * h) as f64;

    let mut total = 0.0;
    let (mut d_mu, mut d_aa, mut d_ab) = if grad {
        (vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };
    for i in 0..w * h {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = m_aa[i] - ma * ma;
        let var_b = m_bb[i] - mb * mb;
        let cov = m_ab[i] - ma * mb;
        let a1 = 2.0 * ma * mb + C1;
        let a2 = 2.0 * cov + C2;
        let b1 = ma * ma + mb * mb + C1;
        let b2 = var_a + var_b + C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        if grad {
            d_mu[i] = (2.0 * mb * (a2 - a1) / (b1 * b2) - 2.0 * ma * s * (1.0 / b1 - 1.0 / b2)) / n;
            d_aa[i] = -s / b2 / n;
            d_ab[i] = 2.0 * a1 / (b1 * b2) / n;
        }
    }
    if !grad {
        return (total / n, None);
    }
    let g_mu = blur(&d_mu, w, h, &k);
    let g_aa = blur(&d_aa, w, h, &k);
    let g_ab = blur(&d_ab, w, h, &k);
    let g = (0..w * h).map(|i| g_mu[i] + 2.0 * a[i] * g_aa[i] + b[i] * g_ab[i]).collect();
    (total / n, Some(g))
}

pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_dims(b)?;
    Ok((0..3)
        .map(|c| channel(&a.channel(c), &b.channel(c), a.width, a.height, false).0)
        .sum::<f64>()
        / 3.0)
}

/// SSIM and its gradient with respect to `a`.
pub fn ssim_grad(a: &ImageBuffer, b: &ImageBuffer) -> Result<(f64, Vec<Vector3<f64>>)> {
    a.same_dims(b)?;
    let mut grad = vec![Vector3::zeros(); a.len()];
    let mut value = 0.0;
    for c in 0..3 {
        let (v, g) = channel(&a.channel(c), &b.channel(c), a.width, a.height, true);
        value += v / 3.0;
        for (o, gi) in grad.iter_mut().zip(g.expect("requested")) {
            o[c] = gi / 3.0;
        }
    }
    Ok((value, grad))
}
