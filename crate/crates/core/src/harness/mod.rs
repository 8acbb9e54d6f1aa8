//! Synthetic datasets, dataset I/O, evaluation metrics and exporters.

pub mod ablation;
pub mod io;
pub mod ply;
pub mod synth;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub use io::{load_dataset, read_pfm, read_png, save_dataset, write_pfm, write_png};
pub use ply::{read_ply, write_ply, PlyVertex};
pub use synth::{synth_scene, CameraRing, Corruption, SceneKind, SceneSpec, SynthScene};

use crate::camera::Camera;
use crate::color::ColorModel;
use crate::error::{Error, Result};
use crate::field::{Aabb, GaussianField};
use crate::losses::ssim;
use crate::raster::{DepthMap, Frame, ImageBuffer, RenderKind};

/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
/// Pixels with rendered accumulated opacity above this count toward depth errors.
pub const DEPTH_MASK_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub name: String,
    pub image: ImageBuffer,
    pub camera: Camera,
    pub mono_depth: Option<DepthMap>,
    pub gt_depth: Option<DepthMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<View>,
    pub test: Vec<View>,
    pub bounds: Aabb,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for split in [&self.train, &self.test] {
            let Some(first) = split.first() else { continue };
            for v in split {
                let (w, h) = (v.camera.width, v.camera.height);
                if (v.image.width, v.image.height) != (w, h) {
                    return Err(Error::dims(
                        format!("{w}x{h} image for {}", v.name),
                        format!("{}x{}", v.image.width, v.image.height),
                    ));
                }
                if (w, h) != (first.camera.width, first.camera.height) {
                    return Err(Error::dims(
                        format!("{}x{} (split resolution)", first.camera.width, first.camera.height),
                        format!("{w}x{h} for {}", v.name),
                    ));
                }
                for d in [&v.mono_depth, &v.gt_depth].into_iter().flatten() {
                    if (d.width, d.height) != (w, h) {
                        return Err(Error::dims(format!("{w}x{h} depth for {}", v.name), format!("{}x{}", d.width, d.height)));
                    }
                    if d.depth.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                        return Err(Error::InvalidConfig(format!("depth map of {} has negative or non-finite values", v.name)));
                    }
                }
            }
        }
        Ok(())
    }

    /// Fails unless every training view carries a monocular depth map.
    pub fn require_mono_depth(&self) -> Result<()> {
        match self.train.iter().find(|v| v.mono_depth.is_none()) {
            Some(v) => Err(Error::InvalidConfig(format!(
                "depth regularization requested but view {} has no monocular depth",
                v.name
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
    pub depth_mae: Option<f64>,
    pub depth_rmse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub name: String,
    #[serde(flatten)]
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub views: Vec<ViewMetrics>,
    /// Mean over views; depth errors over views that have them.
    pub aggregate: Metrics,
}

/// `−10·log10(MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    a.same_dims(b)?;
    let n = (3 * a.len()).max(1) as f64;
    let mse = a.rgb.iter().zip(&b.rgb).map(|(x, y)| (x - y).norm_squared()).sum::<f64>() / n;
    Ok(if mse <= 0.0 { PSNR_CAP } else { (-10.0 * mse.log10()).min(PSNR_CAP) })
}

/// Mean absolute and root-mean-square error over pixels whose rendered
/// accumulated opacity exceeds [`DEPTH_MASK_ALPHA`].
pub fn depth_errors(rendered: &DepthMap, gt: &DepthMap) -> Result<Option<(f64, f64)>> {
    rendered.same_dims(gt)?;
    let (mut n, mut abs, mut sq) = (0usize, 0.0, 0.0);
    for i in 0..rendered.len() {
        if rendered.accum_alpha[i] > DEPTH_MASK_ALPHA {
            let e = rendered.depth[i] - gt.depth[i];
            n += 1;
            abs += e.abs();
            sq += e * e;
        }
    }
    Ok((n > 0).then(|| (abs / n as f64, (sq / n as f64).sqrt())))
}

pub fn evaluate_view(
    field: &GaussianField,
    model: &ColorModel,
    view: &View,
    background: Vector3<f64>,
) -> Result<Metrics> {
    let frame = Frame::prepare(field, &view.camera)?;
    let colors = model.colors(field, &view.camera)?;
    let img = frame.render_color(&colors, background)?;
    let depth = match &view.gt_depth {
        Some(gt) => depth_errors(&frame.render_depth(RenderKind::Depth)?, gt)?,
        None => None,
    };
    Ok(Metrics {
        psnr: psnr(&img, &view.image)?,
        ssim: ssim(&img, &view.image)?,
        depth_mae: depth.map(|d| d.0),
        depth_rmse: depth.map(|d| d.1),
    })
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut n, mut s) = (0usize, 0.0);
    for x in v {
        n += 1;
        s += x;
    }
    (n > 0).then(|| s / n as f64)
}

/// Metrics for every view of `views` plus their mean.
pub fn evaluate_views(
    field: &GaussianField,
    model: &ColorModel,
    views: &[View],
    background: Vector3<f64>,
) -> Result<EvalReport> {
    let views = views
        .iter()
        .map(|v| {
            Ok(ViewMetrics {
                name: v.name.clone(),
                metrics: evaluate_view(field, model, v, background)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = Metrics {
        psnr: mean(views.iter().map(|v| v.metrics.psnr)).unwrap_or(0.0),
        ssim: mean(views.iter().map(|v| v.metrics.ssim)).unwrap_or(0.0),
        depth_mae: mean(views.iter().filter_map(|v| v.metrics.depth_mae)),
        depth_rmse: mean(views.iter().filter_map(|v| v.metrics.depth_rmse)),
    };
    Ok(EvalReport { views, aggregate })
}

/// Evaluates on the test split (the training split if there is none).
pub fn evaluate(field: &GaussianField, model: &ColorModel, dataset: &Dataset, background: Vector3<f64>) -> Result<EvalReport> {
    let views = if dataset.test.is_empty() { &dataset.train } else { &dataset.test };
    evaluate_views(field, model, views, background)
}
