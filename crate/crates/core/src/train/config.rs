//! Training configuration, read from TOML.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::color::{HashGridConfig, MlpConfig};
use crate::error::{Error, Result};
use crate::field::ColorMode;
use crate::losses::LossWeights;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Center rate at iteration 0, before `center_scale`.
    pub center_init: f64,
    /// Center rate at the final iteration, before `center_scale`.
    pub center_final: f64,
    /// Multiplier on the center rate; the scene extent when unset.
    pub center_scale: Option<f64>,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    /// Per-primitive SH coefficients.
    pub color: f64,
    /// Hash tables and MLP weights.
    pub neural: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            center_init: 1.6e-4,
            center_final: 1.6e-6,
            center_scale: None,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            neural: 1e-3,
        }
    }
}

impl LearningRates {
    /// Log-linear decay of the center rate over `total` iterations.
    pub fn center_at(&self, iter: usize, total: usize, extent: f64) -> f64 {
        let t = if total == 0 { 0.0 } else { (iter as f64 / total as f64).clamp(0.0, 1.0) };
        let lr = (self.center_init.ln() * (1.0 - t) + self.center_final.ln() * t).exp();
        lr * self.center_scale.unwrap_or(extent)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub enabled: bool,
    pub interval: usize,
    pub start: usize,
    pub stop: usize,
    /// Mean screen-space gradient norm (NDC units) that triggers densification.
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Primitives larger than this fraction of the scene extent are split, smaller ones cloned.
    pub percent_dense: f64,
    pub split_factor: f64,
    pub max_primitives: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            interval: 100,
            start: 500,
            stop: 4500,
            grad_threshold: 2e-4,
            prune_opacity: 5e-3,
            percent_dense: 0.01,
            split_factor: 1.6,
            max_primitives: 200_000,
        }
    }
}

/// Which parts of the depth regularization are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Regularization {
    pub hard: bool,
    pub soft: bool,
    pub local_norm: bool,
    pub global_norm: bool,
    /// Keep scale and rotation out of both depth terms.
    pub shape_freeze: bool,
    /// Keep centers out of the soft-depth term.
    pub center_freeze: bool,
}

impl Default for Regularization {
    fn default() -> Self {
        Self {
            hard: true,
            soft: true,
            local_norm: true,
            global_norm: true,
            shape_freeze: true,
            center_freeze: true,
        }
    }
}

impl Regularization {
    pub const NONE: Regularization = Regularization {
        hard: false,
        soft: false,
        local_norm: true,
        global_norm: true,
        shape_freeze: true,
        center_freeze: true,
    };

    pub fn any(&self) -> bool {
        (self.hard || self.soft) && (self.local_norm || self.global_norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewSampling {
    /// Uniform with replacement.
    Uniform,
    RoundRobin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_iters: usize,
    pub soft_start_iter: usize,
    #[serde(flatten)]
    pub weights: LossWeights,
    /// Inclusive range the per-step patch size is drawn from.
    pub patch_range: [usize; 2],
    pub color_mode: ColorMode,
    pub init_primitives: usize,
    pub view_sampling: ViewSampling,
    /// Additional training views per step that receive depth terms only.
    pub extra_depth_views: usize,
    /// Held-out evaluation period in iterations (0 disables periodic evaluation).
    pub eval_interval: usize,
    pub background: [f64; 3],
    pub seed: u64,
    pub regularization: Regularization,
    pub lr: LearningRates,
    pub densify: DensifyConfig,
    pub hash_grid: HashGridConfig,
    pub mlp: MlpConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_iters: 6000,
            soft_start_iter: 1000,
            weights: LossWeights::default(),
            patch_range: [5, 17],
            color_mode: ColorMode::Neural,
            init_primitives: 5000,
            view_sampling: ViewSampling::Uniform,
            extra_depth_views: 0,
            eval_interval: 500,
            background: [0.0; 3],
            seed: 0,
            regularization: Regularization::default(),
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
            hash_grid: HashGridConfig::default(),
            mlp: MlpConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.weights.validate()?;
        let [lo, hi] = self.patch_range;
        if lo < 2 || hi < lo {
            return bad(format!("patch_range [{lo}, {hi}] must satisfy 2 <= min <= max"));
        }
        let lr = &self.lr;
        let rates = [lr.center_init, lr.center_final, lr.scale, lr.rotation, lr.opacity, lr.color, lr.neural];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) || lr.center_scale.is_some_and(|s| !(s > 0.0)) {
            return bad("learning rates must be positive".into());
        }
        if self.init_primitives == 0 {
            return bad("init_primitives must be at least 1".into());
        }
        let d = &self.densify;
        if d.enabled && (d.interval == 0 || !(d.split_factor > 1.0) || d.grad_threshold < 0.0) {
            return bad("densify needs interval >= 1, split_factor > 1 and a non-negative threshold".into());
        }
        if self.color_mode == ColorMode::Neural && self.hash_grid.output_dim() != self.mlp.input_dim {
            return bad("hash grid output width must equal the MLP input width".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config is always serializable");
        Sha256::digest(&json).into()
    }
}
