//! Per-primitive color production.

pub mod hash;
pub mod mlp;
pub mod neural;
pub mod sh;

use nalgebra::Vector3;
use rayon::prelude::*;

pub use hash::{HashGridConfig, HashGridEncoder};
pub use mlp::{ColorMlp, MlpConfig};
pub use neural::{NeuralColorRenderer, NeuralGrads};
pub use sh::sh_eval;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::{ColorMode, GaussianField};
use neural::{normalize_vjp, view_direction, NeuralTape};

/// Source of per-primitive RGB for a given camera.
#[derive(Debug, Clone, PartialEq)]
pub enum ColorModel {
    /// Coefficients live on the primitives.
    Sh,
    Neural(Box<NeuralColorRenderer>),
}

/// Forward record for [`ColorModel::backward`].
pub struct ColorTape {
    neural: Option<Vec<NeuralTape>>,
}

/// Gradients produced by the color model.
pub struct ColorGrads {
    /// Per-primitive color parameters, flat `n × K`.
    pub color: Vec<f64>,
    pub center: Vec<Vector3<f64>>,
    pub neural: Option<NeuralGrads>,
}

impl ColorModel {
    pub fn check(&self, field: &GaussianField) -> Result<()> {
        match (self, field.color_mode()) {
            (ColorModel::Sh, ColorMode::Sh(_)) | (ColorModel::Neural(_), ColorMode::Neural) => Ok(()),
            _ => Err(Error::InvalidConfig(format!(
                "color model does not match field color mode {}",
                field.color_mode()
            ))),
        }
    }

    pub fn neural(&self) -> Option<&NeuralColorRenderer> {
        match self {
            ColorModel::Neural(n) => Some(n),
            ColorModel::Sh => None,
        }
    }

    pub fn neural_mut(&mut self) -> Option<&mut NeuralColorRenderer> {
        match self {
            ColorModel::Neural(n) => Some(n),
            ColorModel::Sh => None,
        }
    }

    pub fn colors(&self, field: &GaussianField, cam: &Camera) -> Result<Vec<Vector3<f64>>> {
        self.check(field)?;
        Ok(match self {
            ColorModel::Sh => sh_colors(field, cam),
            ColorModel::Neural(n) => n.colors(field, cam),
        })
    }

    /// Colors seen along a fixed world direction, independent of any camera.
    pub fn colors_along(&self, field: &GaussianField, dir: &Vector3<f64>) -> Result<Vec<Vector3<f64>>> {
        self.check(field)?;
        let dir = dir
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidConfig("zero view direction".into()))?;
        Ok(match (self, field.color_mode()) {
            (ColorModel::Sh, ColorMode::Sh(deg)) => field
                .primitives()
                .iter()
                .map(|p| sh_eval(deg as usize, &p.color, &dir))
                .collect(),
            (ColorModel::Neural(n), _) => {
                let denc = sh::basis(neural::DIRECTION_DEGREE, &dir);
                n.features(field)
                    .iter()
                    .map(|f| Vector3::from(n.mlp.view_stage(f, &denc).0))
                    .collect()
            }
            _ => unreachable!("checked above"),
        })
    }

    pub fn forward(&self, field: &GaussianField, cam: &Camera) -> Result<(Vec<Vector3<f64>>, ColorTape)> {
        self.check(field)?;
        Ok(match self {
            ColorModel::Sh => (sh_colors(field, cam), ColorTape { neural: None }),
            ColorModel::Neural(n) => {
                let (rgb, tapes) = n.forward(field, cam);
                (rgb, ColorTape { neural: Some(tapes) })
            }
        })
    }

    /// Backpropagates per-primitive RGB cotangents.
    pub fn backward(
        &self,
        field: &GaussianField,
        cam: &Camera,
        tape: &ColorTape,
        d_rgb: &[Vector3<f64>],
        color_params: bool,
    ) -> Result<ColorGrads> {
        if d_rgb.len() != field.len() {
            return Err(Error::dims(field.len(), d_rgb.len()));
        }
        match self {
            ColorModel::Sh => {
                let ColorMode::Sh(deg) = field.color_mode() else {
                    unreachable!("checked in forward")
                };
                let k = field.feature_dim();
                let per: Vec<(Vec<f64>, Vector3<f64>)> = field
                    .primitives()
                    .par_iter()
                    .zip(d_rgb.par_iter())
                    .map(|(p, g)| {
                        let mut dc = vec![0.0; k];
                        let (dir, offset) = view_direction(&p.center, cam);
                        let d_dir = sh::sh_eval_vjp(deg as usize, &p.color, &dir, g, Some(&mut dc));
                        let d_center = if deg == 0 { Vector3::zeros() } else { normalize_vjp(&offset, &d_dir) };
                        (dc, d_center)
                    })
                    .collect();
                let mut color = Vec::with_capacity(field.len() * k);
                let mut center = Vec::with_capacity(field.len());
                for (dc, c) in per {
                    if color_params {
                        color.extend(dc);
                    } else {
                        color.extend(std::iter::repeat_n(0.0, k));
                    }
                    center.push(c);
                }
                Ok(ColorGrads {
                    color,
                    center,
                    neural: None,
                })
            }
            ColorModel::Neural(n) => {
                let tapes = tape
                    .neural
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("color tape was not recorded in neural mode".into()))?;
                let (center, grads) = n.backward(tapes, d_rgb, color_params);
                Ok(ColorGrads {
                    color: Vec::new(),
                    center,
                    neural: Some(grads.unwrap_or_else(|| NeuralGrads::zeros_like(n))),
                })
            }
        }
    }
}

fn sh_colors(field: &GaussianField, cam: &Camera) -> Vec<Vector3<f64>> {
    let ColorMode::Sh(deg) = field.color_mode() else {
        return Vec::new();
    };
    field
        .primitives()
        .par_iter()
        .map(|p| {
            let (dir, _) = view_direction(&p.center, cam);
            sh_eval(deg as usize, &p.color, &dir)
        })
        .collect()
}
