//! The optimization loop: color supervision, hard and soft depth
//! regularization under freeze masks, Adam updates and densification.

pub mod adam;
pub mod checkpoint;
pub mod config;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use adam::Moments;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{DensifyConfig, LearningRates, Regularization, TrainConfig, ViewSampling};

use crate::autodiff::{vjp_frame, ColorInputs, Cotangent, GradGroup, ParamGrads};
use crate::camera::Camera;
use crate::color::{ColorModel, NeuralColorRenderer};
use crate::error::{Error, Result};
use crate::field::{init_random, Aabb, ColorMode, FreezeMask, GaussianField, GaussianPrimitive};
use crate::harness::{evaluate, Dataset, View};
use crate::losses::{color_loss_grad, depth_regularization_weighted, partition, total_loss, PatchGrid};
use crate::projection::quat_to_matrix;
use crate::raster::{DepthMap, Frame, RenderKind};

/// Adam moments for every parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub step: u64,
    pub center: Moments,
    pub scale: Moments,
    pub rotation: Moments,
    pub opacity: Moments,
    pub color: Moments,
    pub tables: Moments,
    pub mlp: Moments,
}

impl OptimizerState {
    fn new(field: &GaussianField, model: &ColorModel) -> Self {
        let n = field.len();
        let (t, m) = model
            .neural()
            .map_or((0, 0), |r| (r.encoder.tables.len(), r.mlp.params.len()));
        Self {
            step: 0,
            center: Moments::zeros(3 * n),
            scale: Moments::zeros(3 * n),
            rotation: Moments::zeros(4 * n),
            opacity: Moments::zeros(n),
            color: Moments::zeros(n * field.feature_dim()),
            tables: Moments::zeros(t),
            mlp: Moments::zeros(m),
        }
    }

    /// Primitive count implied by the per-primitive buffers.
    pub fn primitive_count(&self) -> usize {
        self.opacity.len()
    }
}

/// Per-primitive screen-gradient statistics driving densification.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyStats {
    pub accum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    fn zeros(n: usize) -> Self {
        Self {
            accum: vec![0.0; n],
            count: vec![0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub iter: usize,
    pub view: usize,
    pub patch_size: usize,
    pub color: f64,
    pub hard: f64,
    pub soft: f64,
    pub total: f64,
    pub primitives: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// One row of the metric log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iter: usize,
    /// Mean total loss since the previous record.
    pub loss: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub depth_mae: Option<f64>,
    pub depth_rmse: Option<f64>,
    pub primitives: usize,
}

/// Everything the loop mutates.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub field: GaussianField,
    pub model: ColorModel,
    pub iter: usize,
    /// Scene extent used for the center rate and the clone/split boundary.
    pub extent: f64,
    pub optimizer: OptimizerState,
    pub densify: DensifyStats,
    pub(crate) rng: ChaCha8Rng,
}

/// Loss terms and gradient of one step.
#[derive(Debug, Clone)]
pub struct Objective {
    pub color: f64,
    pub hard: f64,
    pub soft: f64,
    pub total: f64,
    pub grads: ParamGrads,
    /// Per-primitive pixel-space gradient norm of the color term; `None`
    /// for primitives outside the view.
    pub screen_grad: Vec<Option<f64>>,
}

/// Gradients of one depth term.
struct DepthTerm {
    value: f64,
    grads: Option<ParamGrads>,
}

impl TrainState {
    /// Random initialization inside the dataset bounds.
    pub fn new(config: TrainConfig, dataset: &Dataset) -> Result<Self> {
        config.validate()?;
        dataset.validate()?;
        let field = init_random(config.init_primitives, &dataset.bounds, config.color_mode, config.seed)?;
        let model = match config.color_mode {
            ColorMode::Sh(_) => ColorModel::Sh,
            ColorMode::Neural => {
                let bounds = encoder_bounds(dataset);
                ColorModel::Neural(Box::new(NeuralColorRenderer::new(
                    config.hash_grid,
                    config.mlp,
                    bounds,
                    config.seed.wrapping_add(1),
                )?))
            }
        };
        Self::from_parts(config, field, model, 0.5 * dataset.bounds.diagonal())
    }

    /// Fresh optimizer state around an existing field and color model.
    pub fn from_parts(config: TrainConfig, field: GaussianField, model: ColorModel, extent: f64) -> Result<Self> {
        model.check(&field)?;
        let optimizer = OptimizerState::new(&field, &model);
        let densify = DensifyStats::zeros(field.len());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            config,
            field,
            model,
            iter: 0,
            extent,
            optimizer,
            densify,
            rng,
        })
    }

    /// Total loss and its gradient at the current iteration.
    ///
    /// `extra` views contribute depth terms only. The gradient follows the
    /// freeze masks of the regularization settings; with `shape_freeze` and
    /// `center_freeze` off it is the exact gradient of `total`.
    pub fn objective(&self, view: &View, extra: &[&View], patch_size: usize) -> Result<Objective> {
        let cfg = &self.config;
        let bg = Vector3::from(cfg.background);
        let reg = cfg.regularization;
        let use_hard = reg.hard && reg.any();
        let use_soft = reg.soft && reg.any() && self.iter >= cfg.soft_start_iter;

        let cam = &view.camera;
        if (view.image.width, view.image.height) != (cam.width, cam.height) {
            return Err(Error::dims(
                format!("{}x{}", cam.width, cam.height),
                format!("{}x{}", view.image.width, view.image.height),
            ));
        }
        let frame = Frame::prepare(&self.field, cam)?;
        let (colors, tape) = self.model.forward(&self.field, cam)?;
        let img = frame.render_color(&colors, bg)?;
        let (color, d_img) = color_loss_grad(&img, &view.image, cfg.weights.lambda)?;
        let inputs = ColorInputs {
            model: &self.model,
            tape: &tape,
            colors: &colors,
        };
        let mut grads = vjp_frame(
            &frame,
            RenderKind::Color,
            &self.field,
            cam,
            Some(inputs),
            bg,
            Cotangent::Rgb(&d_img),
            FreezeMask::NONE,
        )?;
        let (hw, hh) = (cam.width as f64 / 2.0, cam.height as f64 / 2.0);
        let screen_grad = grads
            .mean2d
            .iter()
            .enumerate()
            .map(|(i, g)| frame.is_visible(i).then(|| (g.x * hw).hypot(g.y * hh)))
            .collect();

        let (mut hard, mut soft) = (0.0, 0.0);
        if use_hard || use_soft {
            for (k, v) in std::iter::once(view).chain(extra.iter().copied()).enumerate() {
                let own;
                let f = if k == 0 {
                    &frame
                } else {
                    own = Frame::prepare(&self.field, &v.camera)?;
                    &own
                };
                let grid = partition(v.camera.width, v.camera.height, patch_size)?;
                let mono = v.mono_depth.as_ref().ok_or_else(|| {
                    Error::InvalidConfig(format!("depth regularization requested but view {} has no monocular depth", v.name))
                })?;
                if use_hard {
                    let t = self.depth_term(f, &v.camera, RenderKind::HardDepth(cfg.weights.tau), mono, &grid)?;
                    hard += t.value;
                    if let Some(g) = t.grads {
                        grads.add_scaled(&g, 1.0);
                    }
                }
                if use_soft {
                    let t = self.depth_term(f, &v.camera, RenderKind::SoftDepth, mono, &grid)?;
                    soft += t.value;
                    if let Some(g) = t.grads {
                        grads.add_scaled(&g, 1.0);
                    }
                }
            }
        }
        Ok(Objective {
            color,
            hard,
            soft,
            total: total_loss(color, hard, soft),
            grads,
            screen_grad,
        })
    }

    /// One optimization step on `view`; `extra` views contribute depth terms only.
    pub fn train_step(&mut self, view: &View, extra: &[&View]) -> Result<StepStats> {
        let iter = self.iter;
        let [lo, hi] = self.config.patch_range;
        let patch_size = self.rng.random_range(lo..=hi);
        let Objective {
            color,
            hard,
            soft,
            total,
            grads,
            screen_grad,
        } = self.objective(view, extra, patch_size)?;
        if !total.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                iter,
                diagnostic: format!(
                    "color={color} hard={hard} soft={soft} primitives={} non-finite primitives={} finite gradients={}",
                    self.field.len(),
                    self.field.primitives().iter().filter(|p| !p.is_finite()).count(),
                    grads.is_finite()
                ),
            });
        }
        for (i, g) in screen_grad.iter().enumerate() {
            if let Some(g) = g {
                self.densify.accum[i] += g;
                self.densify.count[i] += 1;
            }
        }
        self.apply(&grads);
        self.iter += 1;

        let d = self.config.densify;
        if d.enabled && self.iter >= d.start && self.iter <= d.stop && self.iter % d.interval == 0 {
            self.densify_and_prune();
        }
        Ok(StepStats {
            iter,
            view: 0,
            patch_size,
            color,
            hard,
            soft,
            total,
            primitives: self.field.len(),
        })
    }

    fn depth_term(&self, frame: &Frame, cam: &Camera, kind: RenderKind, mono: &DepthMap, grid: &PatchGrid) -> Result<DepthTerm> {
        let reg = self.config.regularization;
        let w = self.config.weights;
        let rendered = frame.render_depth(kind)?;
        let gw = if reg.global_norm { 1.0 } else { 0.0 };
        let lw = if reg.local_norm { w.gamma } else { 0.0 };
        let (value, up) = depth_regularization_weighted(&rendered, mono, grid, gw, lw, w.delta)?;
        if up.iter().all(|g| *g == 0.0) {
            return Ok(DepthTerm { value, grads: None });
        }
        let (vjp_kind, mask) = match kind {
            RenderKind::HardDepth(_) => (
                kind,
                FreezeMask {
                    center: false,
                    scale: reg.shape_freeze,
                    rotation: reg.shape_freeze,
                    opacity: true,
                    color: true,
                },
            ),
            _ => {
                let mask = FreezeMask {
                    center: reg.center_freeze,
                    scale: reg.shape_freeze,
                    rotation: reg.shape_freeze,
                    opacity: false,
                    color: true,
                };
                // The soft render detaches geometry; unfreezing any of it
                // differentiates the plain depth render instead.
                let k = if mask == FreezeMask::SOFT_DEPTH { RenderKind::SoftDepth } else { RenderKind::Depth };
                (k, mask)
            }
        };
        let grads = vjp_frame(frame, vjp_kind, &self.field, cam, None, Vector3::zeros(), Cotangent::Depth(&up), mask)?;
        Ok(DepthTerm {
            value,
            grads: Some(grads),
        })
    }

    fn apply(&mut self, g: &ParamGrads) {
        let cfg = &self.config;
        let lr = cfg.lr;
        let center_lr = lr.center_at(self.iter, cfg.total_iters, self.extent);
        let opt = &mut self.optimizer;
        opt.step += 1;
        let t = opt.step;
        let prims = self.field.primitives_mut();

        let n = prims.len();
        let (mut c, mut s, mut r) = (Vec::with_capacity(3 * n), Vec::with_capacity(3 * n), Vec::with_capacity(4 * n));
        let (mut o, mut k) = (Vec::with_capacity(n), Vec::new());
        for p in prims.iter() {
            c.extend(p.center.iter());
            s.extend(p.log_scale.iter());
            r.extend(p.rotation.iter());
            o.push(p.opacity_logit);
            k.extend(&p.color);
        }
        opt.center.step(&mut c, &g.group(GradGroup::Center), center_lr, t);
        opt.scale.step(&mut s, &g.group(GradGroup::Scale), lr.scale, t);
        opt.rotation.step(&mut r, &g.group(GradGroup::Rotation), lr.rotation, t);
        opt.opacity.step(&mut o, &g.opacity, lr.opacity, t);
        if !k.is_empty() {
            opt.color.step(&mut k, &g.color, lr.color, t);
        }

        let kd = if prims.is_empty() { 0 } else { k.len() / prims.len() };
        for (i, p) in prims.iter_mut().enumerate() {
            p.center = Vector3::new(c[3 * i], c[3 * i + 1], c[3 * i + 2]);
            p.log_scale = Vector3::new(s[3 * i], s[3 * i + 1], s[3 * i + 2]);
            p.rotation = Vector4::new(r[4 * i], r[4 * i + 1], r[4 * i + 2], r[4 * i + 3]);
            p.opacity_logit = o[i];
            p.color.copy_from_slice(&k[kd * i..kd * (i + 1)]);
        }

        if let (Some(n), Some(ng)) = (self.model.neural_mut(), g.neural.as_ref()) {
            let (tables, mlp) = n.params_mut();
            opt.tables.step(tables, &ng.tables, lr.neural, t);
            opt.mlp.step(mlp, &ng.mlp, lr.neural, t);
        }
    }

    /// Clones or splits primitives whose mean screen gradient exceeds the
    /// threshold, removes nearly transparent ones and resets statistics.
    pub fn densify_and_prune(&mut self) -> DensifyReport {
        let d = self.config.densify;
        let n = self.field.len();
        let old = self.field.primitives();
        let mut report = DensifyReport::default();
        let mut kept: Vec<(GaussianPrimitive, Option<usize>)> = Vec::with_capacity(n);
        let mut added: Vec<GaussianPrimitive> = Vec::new();
        let mut budget = d.max_primitives.saturating_sub(n);
        let big = d.percent_dense * self.extent;
        for (i, p) in old.iter().enumerate() {
            let cnt = self.densify.count[i];
            let avg = if cnt > 0 { self.densify.accum[i] / cnt as f64 } else { 0.0 };
            if cnt == 0 || avg < d.grad_threshold || budget == 0 {
                kept.push((p.clone(), Some(i)));
                continue;
            }
            budget -= 1;
            if p.scale().max() > big {
                report.split += 1;
                for _ in 0..2 {
                    let mut c = p.clone();
                    c.center = p.center + sample_offset(p, &mut self.rng);
                    c.log_scale = p.log_scale.map(|v| v - d.split_factor.ln());
                    added.push(c);
                }
            } else {
                report.cloned += 1;
                let mut c = p.clone();
                c.center = p.center + sample_offset(p, &mut self.rng);
                kept.push((p.clone(), Some(i)));
                added.push(c);
            }
        }
        let mut all: Vec<(GaussianPrimitive, Option<usize>)> = kept;
        all.extend(added.into_iter().map(|p| (p, None)));
        let before = all.len();
        all.retain(|(p, _)| p.opacity() >= d.prune_opacity);
        report.pruned = before - all.len();

        if report != DensifyReport::default() {
            let origin: Vec<Option<usize>> = all.iter().map(|(_, o)| *o).collect();
            let k = self.field.feature_dim();
            let opt = &mut self.optimizer;
            opt.center = opt.center.remap(&origin, 3);
            opt.scale = opt.scale.remap(&origin, 3);
            opt.rotation = opt.rotation.remap(&origin, 4);
            opt.opacity = opt.opacity.remap(&origin, 1);
            opt.color = opt.color.remap(&origin, k);
            *self.field.primitives_mut() = all.into_iter().map(|(p, _)| p).collect();
        }
        self.densify = DensifyStats::zeros(self.field.len());
        report
    }
}

/// A draw from the primitive's own Gaussian, centered at zero.
fn sample_offset(p: &GaussianPrimitive, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let z = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
    let q = p.rotation.try_normalize(1e-12).unwrap_or(Vector4::new(1.0, 0.0, 0.0, 0.0));
    quat_to_matrix(&q) * p.scale().component_mul(&z)
}

/// Scene bounds joined with the camera centers, padded by 10%.
pub fn encoder_bounds(ds: &Dataset) -> Aabb {
    let mut b = ds.bounds;
    for v in ds.train.iter().chain(&ds.test) {
        let c = v.camera.center();
        b = b.union(&Aabb::new(c, c));
    }
    b.padded(0.1)
}

/// Output of [`fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: TrainState,
    pub log: Vec<MetricRecord>,
}

fn pick_views<'a>(state: &mut TrainState, ds: &'a Dataset) -> (usize, Vec<&'a View>) {
    let n = ds.train.len();
    let idx = match state.config.view_sampling {
        ViewSampling::Uniform => state.rng.random_range(0..n),
        ViewSampling::RoundRobin => state.iter % n,
    };
    let extra = (0..state.config.extra_depth_views)
        .filter(|_| n > 1)
        .map(|_| {
            let j = state.rng.random_range(0..n - 1);
            &ds.train[if j >= idx { j + 1 } else { j }]
        })
        .collect();
    (idx, extra)
}

fn record(state: &TrainState, ds: &Dataset, loss: f64) -> Result<MetricRecord> {
    let bg = Vector3::from(state.config.background);
    let r = evaluate(&state.field, &state.model, ds, bg)?;
    Ok(MetricRecord {
        iter: state.iter,
        loss,
        psnr: r.aggregate.psnr,
        ssim: r.aggregate.ssim,
        depth_mae: r.aggregate.depth_mae,
        depth_rmse: r.aggregate.depth_rmse,
        primitives: state.field.len(),
    })
}

/// Continues training `state` until `config.total_iters`, evaluating on the
/// held-out split every `eval_interval` iterations and at the end.
pub fn resume(state: TrainState, dataset: &Dataset, on_step: impl FnMut(&StepStats)) -> Result<FitResult> {
    let total = state.config.total_iters;
    train_until(state, dataset, total, on_step)
}

/// Like [`resume`] but stops after iteration `until` (capped at
/// `total_iters`); the schedule still follows `total_iters`.
pub fn train_until(mut state: TrainState, dataset: &Dataset, until: usize, mut on_step: impl FnMut(&StepStats)) -> Result<FitResult> {
    dataset.validate()?;
    if state.config.regularization.any() {
        dataset.require_mono_depth()?;
    }
    let stop = until.min(state.config.total_iters);
    let every = state.config.eval_interval;
    let mut log = Vec::new();
    let (mut loss_sum, mut loss_n) = (0.0, 0usize);
    while state.iter < stop {
        let (idx, extra) = pick_views(&mut state, dataset);
        let mut s = state.train_step(&dataset.train[idx], &extra)?;
        s.view = idx;
        on_step(&s);
        loss_sum += s.total;
        loss_n += 1;
        if (every > 0 && state.iter % every == 0) || state.iter == stop {
            log.push(record(&state, dataset, loss_sum / loss_n as f64)?);
            loss_sum = 0.0;
            loss_n = 0;
        }
    }
    if log.is_empty() {
        log.push(record(&state, dataset, 0.0)?);
    }
    Ok(FitResult { state, log })
}

/// Trains a freshly initialized field on `dataset`.
pub fn fit(config: &TrainConfig, dataset: &Dataset) -> Result<FitResult> {
    if config.regularization.any() {
        dataset.require_mono_depth()?;
    }
    let state = TrainState::new(config.clone(), dataset)?;
    resume(state, dataset, |_| {})
}
