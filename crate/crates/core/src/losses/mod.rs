//! Patch grids, depth normalization, SSIM and the training objective.

pub mod norm;
pub mod patch;
pub mod ssim;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use norm::{
    depth_regularization, depth_regularization_grad, depth_regularization_weighted, normalize, normalize_global, normalize_local, normalize_vjp,
    tolerant_l2, Epsilon, NormMode, NormalizedDepth,
};
pub use patch::{partition, Patch, PatchGrid};
pub use ssim::{ssim, ssim_grad};

use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// D-SSIM weight.
    pub lambda: f64,
    /// Weight of the local-normalization term.
    pub gamma: f64,
    /// Error tolerance of the depth L2, in normalized units.
    pub delta: f64,
    /// Opacity substituted for every primitive in hard depth.
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda: 0.2,
            gamma: 0.1,
            delta: 0.05,
            tau: 0.95,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.lambda, self.gamma, self.delta].iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.tau > 0.0
            && self.tau < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid loss weights {self:?}")))
        }
    }
}

/// `mean|Î − I| + λ(1 − SSIM(Î, I))`.
pub fn color_loss(rendered: &ImageBuffer, gt: &ImageBuffer, lambda: f64) -> Result<f64> {
    rendered.same_dims(gt)?;
    let l1 = l1(rendered, gt);
    if lambda == 0.0 {
        return Ok(l1);
    }
    Ok(l1 + lambda * (1.0 - ssim(rendered, gt)?))
}

fn l1(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let n = (3 * a.len()).max(1) as f64;
    a.rgb.iter().zip(&b.rgb).map(|(x, y)| (x - y).abs().sum()).sum::<f64>() / n
}

/// [`color_loss`] and its gradient with respect to `rendered`.
pub fn color_loss_grad(rendered: &ImageBuffer, gt: &ImageBuffer, lambda: f64) -> Result<(f64, Vec<Vector3<f64>>)> {
    rendered.same_dims(gt)?;
    let n = (3 * rendered.len()).max(1) as f64;
    let mut grad: Vec<Vector3<f64>> = rendered
        .rgb
        .iter()
        .zip(&gt.rgb)
        .map(|(x, y)| (x - y).map(|d| if d == 0.0 { 0.0 } else { d.signum() / n }))
        .collect();
    let mut value = l1(rendered, gt);
    if lambda != 0.0 {
        let (s, gs) = ssim_grad(rendered, gt)?;
        value += lambda * (1.0 - s);
        for (g, d) in grad.iter_mut().zip(gs) {
            *g -= d * lambda;
        }
    }
    Ok((value, grad))
}

/// `ℒ_color + ℛ_hard + ℛ_soft`.
pub fn total_loss(color: f64, r_hard: f64, r_soft: f64) -> f64 {
    color + r_hard + r_soft
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn color_loss_examples() {
        let a = ImageBuffer::filled(8, 8, Vector3::zeros());
        let b = ImageBuffer::filled(8, 8, Vector3::repeat(1.0));
        assert_eq!(color_loss(&a, &a, 0.2).unwrap(), 0.0);
        assert_abs_diff_eq!(color_loss(&a, &b, 0.0).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn total_is_sum() {
        assert_eq!(total_loss(0.0, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(total_loss(0.3, 0.1, 0.05), 0.45, epsilon = 1e-15);
    }

    #[test]
    fn color_grad_matches_finite_differences() {
        let a = ImageBuffer::from_fn(12, 12, |x, y| Vector3::new(0.1 * x as f64 / 1.2, 0.5, (y as f64 * 0.3).sin().abs()));
        let b = ImageBuffer::from_fn(12, 12, |x, y| Vector3::new(0.4, 0.07 * y as f64, (x as f64 * 0.2).cos().abs()));
        let (_, g) = color_loss_grad(&a, &b, 0.2).unwrap();
        for (i, c) in [(3, 0), (50, 1), (77, 2), (140, 2)] {
            let mut p = a.clone();
            p.rgb[i][c] += 1e-6;
            let mut m = a.clone();
            m.rgb[i][c] -= 1e-6;
            let fd = (color_loss(&p, &b, 0.2).unwrap() - color_loss(&m, &b, 0.2).unwrap()) / 2e-6;
            assert!((fd - g[i][c]).abs() < 1e-8, "{i},{c}: {fd} vs {}", g[i][c]);
        }
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights { tau: 1.0, ..Default::default() }.validate().is_err());
    }
}
