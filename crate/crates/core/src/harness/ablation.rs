//! Paired desk-scale training runs for the regularization ablations.

use serde::{Deserialize, Serialize};

use super::synth::{synth_scene, Corruption, SceneSpec};
use super::{Dataset, Metrics};
use crate::error::Result;
use crate::field::ColorMode;
use crate::train::{fit, Regularization, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Hard and soft depth with local and global normalization.
    Full,
    /// Color supervision only.
    NoRegularization,
    /// Hard and soft depth with global normalization only.
    GlobalOnly,
    /// Full, but depth terms also move scale and rotation.
    NoShapeFreeze,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoRegularization, Variant::GlobalOnly, Variant::NoShapeFreeze];

    pub fn regularization(self) -> Regularization {
        let full = Regularization::default();
        match self {
            Variant::Full => full,
            Variant::NoRegularization => Regularization::NONE,
            Variant::GlobalOnly => Regularization {
                local_norm: false,
                ..full
            },
            Variant::NoShapeFreeze => Regularization {
                shape_freeze: false,
                ..full
            },
        }
    }
}

/// Forward-facing two-plane scene with three training views.
pub fn desk_scene_spec(corruption: Corruption) -> SceneSpec {
    SceneSpec {
        width: 48,
        height: 48,
        focal: 48.0,
        primitives: 800,
        corruption,
        ..Default::default()
    }
}

/// Monocular-like corruption used for the ablation scenes.
pub const DESK_CORRUPTION: Corruption = Corruption {
    a: 0.5,
    b: 3.0,
    sigma: 0.0,
};

/// Desk-scale training schedule for `iters` iterations.
pub fn desk_config(iters: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        total_iters: iters,
        soft_start_iter: iters / 6,
        color_mode: ColorMode::Sh(0),
        init_primitives: 500,
        eval_interval: 0,
        seed,
        ..Default::default()
    };
    cfg.densify.start = iters / 12;
    cfg.densify.stop = iters * 3 / 4;
    cfg
}

pub fn desk_dataset(seed: u64, corruption: Corruption) -> Result<Dataset> {
    Ok(synth_scene(&desk_scene_spec(corruption), seed)?.dataset)
}

/// Held-out metrics after training `variant` on `dataset`.
pub fn run_variant(dataset: &Dataset, variant: Variant, iters: usize, seed: u64) -> Result<Metrics> {
    let mut cfg = desk_config(iters, seed);
    cfg.regularization = variant.regularization();
    let r = fit(&cfg, dataset)?;
    let last = r.log.last().expect("fit always records the final iteration");
    Ok(Metrics {
        psnr: last.psnr,
        ssim: last.ssim,
        depth_mae: last.depth_mae,
        depth_rmse: last.depth_rmse,
    })
}
