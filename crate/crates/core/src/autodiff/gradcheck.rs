//! Central finite-difference verification of the analytic gradients.
//!
//! Each scalar parameter is perturbed by ±h and the loss re-evaluated. An
//! entry whose perturbation changes the piecewise structure of the render
//! (which primitives contribute, which are clamped, hash cells, ReLU and
//! clamp states) is skipped: central differences across a kink measure
//! nothing useful.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{vjp_render, Cotangent, ParamGrads};
use crate::camera::Camera;
use crate::color::neural::{view_direction, DIRECTION_DEGREE};
use crate::color::{sh, ColorModel};
use crate::error::{Error, Result};
use crate::field::{logit, ColorMode, FreezeMask, GaussianField, GaussianPrimitive};
use crate::harness::View;
use crate::losses::{normalize, partition, Epsilon, NormMode};
use crate::raster::{DepthMap, Frame, ImageBuffer, RenderKind, DEFAULT_TAU};
use crate::train::TrainState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradGroup {
    Center,
    Scale,
    Rotation,
    Opacity,
    Color,
    NeuralTables,
    NeuralMlp,
}

impl GradGroup {
    pub const GEOMETRY: [GradGroup; 4] = [GradGroup::Center, GradGroup::Scale, GradGroup::Rotation, GradGroup::Opacity];

    pub fn frozen_by(self, mask: &FreezeMask) -> bool {
        match self {
            GradGroup::Center => mask.center,
            GradGroup::Scale => mask.scale,
            GradGroup::Rotation => mask.rotation,
            GradGroup::Opacity => mask.opacity,
            GradGroup::Color | GradGroup::NeuralTables | GradGroup::NeuralMlp => mask.color,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: GradGroup,
    /// Largest relative error among entries above the absolute floor.
    pub max_rel: f64,
    pub max_abs: f64,
    pub checked: usize,
    /// Entries skipped because ±h straddles a kink.
    pub skipped: usize,
    /// Largest analytic magnitude seen (sanity: the check is not vacuous).
    pub max_grad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub h: f64,
    pub abs_floor: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn group(&self, g: GradGroup) -> Option<&GroupReport> {
        self.groups.iter().find(|r| r.group == g)
    }

    pub fn max_rel(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel).fold(0.0, f64::max)
    }

    pub fn passes(&self, rel_tol: f64) -> bool {
        self.groups.iter().all(|g| g.max_rel <= rel_tol)
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "h = {:e}, absolute floor = {:e}", self.h, self.abs_floor)?;
        for g in &self.groups {
            writeln!(
                f,
                "  {:<13} max_rel {:.3e}  max_abs {:.3e}  |g|max {:.3e}  checked {:>5}  skipped {}",
                format!("{:?}", g.group),
                g.max_rel,
                g.max_abs,
                g.max_grad,
                g.checked,
                g.skipped
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CheckOptions {
    pub h: f64,
    pub abs_floor: f64,
    pub groups: Vec<GradGroup>,
    /// Groups whose analytic gradient must be exactly zero (not perturbed).
    pub zero_groups: Vec<GradGroup>,
    /// Cap on entries per group; larger groups are strided.
    pub max_entries: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            abs_floor: 1e-7,
            groups: GradGroup::GEOMETRY.to_vec(),
            zero_groups: Vec::new(),
            max_entries: usize::MAX,
        }
    }
}

fn entries(field: &GaussianField, model: &ColorModel, g: GradGroup) -> usize {
    let n = field.len();
    match g {
        GradGroup::Center | GradGroup::Scale => 3 * n,
        GradGroup::Rotation => 4 * n,
        GradGroup::Opacity => n,
        GradGroup::Color => n * field.feature_dim(),
        GradGroup::NeuralTables => model.neural().map_or(0, |m| m.encoder.tables.len()),
        GradGroup::NeuralMlp => model.neural().map_or(0, |m| m.mlp.params.len()),
    }
}

fn perturb(field: &mut GaussianField, model: &mut ColorModel, g: GradGroup, idx: usize, delta: f64) {
    match g {
        GradGroup::Center => field.primitives_mut()[idx / 3].center[idx % 3] += delta,
        GradGroup::Scale => field.primitives_mut()[idx / 3].log_scale[idx % 3] += delta,
        GradGroup::Rotation => field.primitives_mut()[idx / 4].rotation[idx % 4] += delta,
        GradGroup::Opacity => field.primitives_mut()[idx].opacity_logit += delta,
        GradGroup::Color => {
            let k = field.feature_dim();
            field.primitives_mut()[idx / k].color[idx % k] += delta;
        }
        GradGroup::NeuralTables => {
            if let Some(n) = model.neural_mut() {
                n.params_mut().0[idx] += delta;
            }
        }
        GradGroup::NeuralMlp => {
            if let Some(n) = model.neural_mut() {
                n.params_mut().1[idx] += delta;
            }
        }
    }
}

/// Compares `analytic` against central differences of `loss`.
///
/// `signature` hashes the piecewise structure the loss depends on; entries
/// whose `±h` evaluations disagree on it are skipped.
pub fn check_against<F, S>(
    field: &GaussianField,
    model: &ColorModel,
    analytic: &ParamGrads,
    loss: F,
    signature: S,
    opts: &CheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&GaussianField, &ColorModel) -> Result<f64>,
    S: Fn(&GaussianField, &ColorModel) -> Result<u64>,
{
    let mut groups = Vec::new();
    for &g in &opts.zero_groups {
        let a = analytic.group(g);
        let m = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        groups.push(GroupReport {
            group: g,
            max_rel: if m == 0.0 { 0.0 } else { f64::INFINITY },
            max_abs: m,
            checked: a.len(),
            skipped: 0,
            max_grad: m,
        });
    }
    for &g in &opts.groups {
        let total = entries(field, model, g);
        let a = analytic.group(g);
        let stride = total.div_ceil(opts.max_entries.max(1)).max(1);
        let mut rep = GroupReport {
            group: g,
            max_rel: 0.0,
            max_abs: 0.0,
            checked: 0,
            skipped: 0,
            max_grad: 0.0,
        };
        for idx in (0..total).step_by(stride) {
            let (mut fp, mut mp) = (field.clone(), model.clone());
            perturb(&mut fp, &mut mp, g, idx, opts.h);
            let (mut fm, mut mm) = (field.clone(), model.clone());
            perturb(&mut fm, &mut mm, g, idx, -opts.h);
            if signature(&fp, &mp)? != signature(&fm, &mm)? {
                rep.skipped += 1;
                continue;
            }
            let numeric = (loss(&fp, &mp)? - loss(&fm, &mm)?) / (2.0 * opts.h);
            let an = a[idx];
            let abs = (an - numeric).abs();
            rep.max_abs = rep.max_abs.max(abs);
            rep.max_grad = rep.max_grad.max(an.abs());
            if abs > opts.abs_floor {
                let rel = abs / an.abs().max(numeric.abs());
                rep.max_rel = rep.max_rel.max(rel);
            }
            rep.checked += 1;
        }
        groups.push(rep);
    }
    Ok(GradCheckReport {
        h: opts.h,
        abs_floor: opts.abs_floor,
        groups,
    })
}

/// Output of a single render.
#[derive(Debug, Clone, PartialEq)]
pub enum RenderOutput {
    Image(ImageBuffer),
    Depth(DepthMap),
}

/// Owned per-pixel cotangent.
#[derive(Debug, Clone, PartialEq)]
pub enum OwnedCotangent {
    Rgb(Vec<Vector3<f64>>),
    Depth(Vec<f64>),
}

impl OwnedCotangent {
    pub fn view(&self) -> Cotangent<'_> {
        match self {
            OwnedCotangent::Rgb(v) => Cotangent::Rgb(v),
            OwnedCotangent::Depth(v) => Cotangent::Depth(v),
        }
    }
}

/// A scalar loss on a render, returning its value and cotangent.
pub type LossFn = dyn Fn(&RenderOutput) -> (f64, OwnedCotangent) + Sync;

/// `⟨w, render⟩` with fixed per-pixel weights (channel-major for RGB:
/// `w[3·pixel + c]`).
pub fn linear_loss(weights: Vec<f64>) -> Box<LossFn> {
    Box::new(move |r: &RenderOutput| match r {
        RenderOutput::Image(img) => {
            let mut v = 0.0;
            let mut g = Vec::with_capacity(img.len());
            for (i, p) in img.rgb.iter().enumerate() {
                let w = Vector3::new(weights[3 * i], weights[3 * i + 1], weights[3 * i + 2]);
                v += w.dot(p);
                g.push(w);
            }
            (v, OwnedCotangent::Rgb(g))
        }
        RenderOutput::Depth(d) => {
            let v = d.depth.iter().zip(&weights).map(|(a, b)| a * b).sum();
            (v, OwnedCotangent::Depth(weights[..d.len()].to_vec()))
        }
    })
}

/// Sum of every output value.
pub fn sum_loss() -> Box<LossFn> {
    Box::new(|r: &RenderOutput| match r {
        RenderOutput::Image(img) => (
            img.rgb.iter().map(|p| p.sum()).sum(),
            OwnedCotangent::Rgb(vec![Vector3::repeat(1.0); img.len()]),
        ),
        RenderOutput::Depth(d) => (d.depth.iter().sum(), OwnedCotangent::Depth(vec![1.0; d.len()])),
    })
}

/// Renders any kind, producing colors from the model when needed.
pub fn render_output(
    kind: RenderKind,
    field: &GaussianField,
    cam: &Camera,
    model: &ColorModel,
    background: Vector3<f64>,
) -> Result<RenderOutput> {
    let frame = Frame::prepare(field, cam)?;
    Ok(match kind {
        RenderKind::Color => {
            let colors = model.colors(field, cam)?;
            RenderOutput::Image(frame.render_color(&colors, background)?)
        }
        k => RenderOutput::Depth(frame.render_depth(k)?),
    })
}

/// Hash of the contributor structure of a render plus the color model's
/// piecewise state.
pub fn structure_signature(kinds: &[RenderKind], field: &GaussianField, cam: &Camera, model: &ColorModel) -> Result<u64> {
    let mut h = DefaultHasher::new();
    let frame = Frame::prepare(field, cam)?;
    for &kind in kinds {
        for y in 0..frame.height() {
            for x in 0..frame.width() {
                frame.trace_pixel(kind, x, y, |c| {
                    c.index.hash(&mut h);
                    c.clamped.hash(&mut h);
                });
                0xffu8.hash(&mut h);
            }
        }
    }
    if kinds.contains(&RenderKind::Color) {
        color_signature(field, cam, model, &mut h);
    }
    Ok(h.finish())
}

fn color_signature(field: &GaussianField, cam: &Camera, model: &ColorModel, h: &mut DefaultHasher) {
    match model {
        ColorModel::Sh => {
            if let ColorMode::Sh(deg) = field.color_mode() {
                for p in field.primitives() {
                    let (dir, _) = view_direction(&p.center, cam);
                    let raw = sh::sh_eval_raw(deg as usize, &p.color, &dir);
                    for c in 0..3 {
                        (raw[c] < 0.0, raw[c] > 1.0).hash(h);
                    }
                }
            }
        }
        ColorModel::Neural(n) => {
            for p in field.primitives() {
                let (_, tape) = n.encoder.encode_with_tape(&p.center);
                for lc in &tape.corners {
                    for &(off, _) in lc {
                        off.hash(h);
                    }
                }
                let (feat, ta) = n.mlp.position_stage(&n.encoder.encode(&p.center));
                let (dir, _) = view_direction(&p.center, cam);
                let (_, tb) = n.mlp.view_stage(&feat, &sh::basis(DIRECTION_DEGREE, &dir));
                ta.relu_pattern(h);
                tb.relu_pattern(h);
            }
        }
    }
}

/// Checks `vjp_render` for one render kind and loss.
///
/// Groups a render kind cannot reach (opacity for hard depth, everything
/// but opacity for soft depth, color for depth kinds) and groups frozen by
/// `mask` are reported as exact-zero checks instead of being perturbed.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check(
    field: &GaussianField,
    cam: &Camera,
    model: &ColorModel,
    kind: RenderKind,
    loss: &LossFn,
    h: f64,
    mask: FreezeMask,
    background: Vector3<f64>,
) -> Result<GradCheckReport> {
    let out = render_output(kind, field, cam, model, background)?;
    let (_, cot) = loss(&out);
    let analytic = vjp_render(kind, field, cam, model, background, cot.view(), mask)?;

    let mut all = GradGroup::GEOMETRY.to_vec();
    match model {
        ColorModel::Sh => all.push(GradGroup::Color),
        ColorModel::Neural(_) => all.extend([GradGroup::NeuralTables, GradGroup::NeuralMlp]),
    }
    let reachable = |g: GradGroup| match kind {
        RenderKind::Color => true,
        RenderKind::Depth => GradGroup::GEOMETRY.contains(&g),
        RenderKind::HardDepth(_) => matches!(g, GradGroup::Center | GradGroup::Scale | GradGroup::Rotation),
        RenderKind::SoftDepth => g == GradGroup::Opacity,
    };
    let mut opts = CheckOptions {
        h,
        max_entries: 600,
        ..Default::default()
    };
    opts.groups = all.iter().copied().filter(|g| reachable(*g) && !g.frozen_by(&mask)).collect();
    opts.zero_groups = all.iter().copied().filter(|g| !reachable(*g) || g.frozen_by(&mask)).collect();

    let kinds = [kind];
    check_against(
        field,
        model,
        &analytic,
        |f, m| {
            let r = render_output(kind, f, cam, m, background)?;
            Ok(loss(&r).0)
        },
        |f, m| structure_signature(&kinds, f, cam, m),
        &opts,
    )
}

/// Small random scene in front of a square camera: `prims` primitives in a
/// unit box around the origin, seen from about three units away.
pub fn random_scene(seed: u64, size: usize, prims: usize, mode: ColorMode) -> Result<(GaussianField, Camera)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = mode.feature_dim();
    let primitives = (0..prims)
        .map(|_| GaussianPrimitive {
            center: Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3)),
            log_scale: Vector3::from_fn(|_, _| rng.random_range(-2.6..-1.6)),
            rotation: Vector4::new(1.0, rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
            opacity_logit: logit(rng.random_range(0.2..0.8)),
            color: (0..k).map(|_| rng.random_range(-0.3..0.3)).collect(),
        })
        .collect();
    let field = GaussianField::from_primitives(mode, primitives)?;
    let eye = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), -3.0);
    let cam = Camera::look_at(eye, Vector3::zeros(), -Vector3::y(), 1.6 * size as f64, size, size)?;
    Ok((field, cam))
}

/// Runs [`finite_diff_check`] for every render kind with random linear losses.
pub fn check_all_kinds(
    field: &GaussianField,
    cam: &Camera,
    model: &ColorModel,
    h: f64,
    seed: u64,
) -> Result<Vec<(RenderKind, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bg = Vector3::new(0.1, 0.2, 0.3);
    [RenderKind::Color, RenderKind::Depth, RenderKind::HardDepth(DEFAULT_TAU), RenderKind::SoftDepth]
        .into_iter()
        .map(|kind| {
            let len = cam.pixel_count() * if kind == RenderKind::Color { 3 } else { 1 };
            let loss = linear_loss((0..len).map(|_| rng.random_range(-1.0..1.0)).collect());
            Ok((kind, finite_diff_check(field, cam, model, kind, &loss, h, FreezeMask::NONE, bg)?))
        })
        .collect()
}

/// Random target image and positive monocular depth for `cam`.
pub fn random_view(seed: u64, cam: &Camera) -> View {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (cam.width, cam.height);
    let image = ImageBuffer::from_fn(w, h, |_, _| Vector3::from_fn(|_, _| rng.random::<f64>()));
    let (fx, fy, ph) = (rng.random_range(0.1..0.5), rng.random_range(0.1..0.5), rng.random_range(0.0..6.0));
    let depth = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            2.5 + 0.4 * (fx * x + ph).sin() * (fy * y).cos() + 0.05 * rng.random::<f64>()
        })
        .collect();
    View {
        name: format!("random_{seed}"),
        image,
        camera: cam.clone(),
        mono_depth: Some(DepthMap::from_depth(w, h, depth).expect("sized to the camera")),
        gt_depth: None,
    }
}

/// Checks the gradient of the full training objective (color loss plus hard
/// and soft depth regularization with both normalizations) at `state`.
///
/// Freeze masks make the training gradient a partial one, so `state` must
/// have shape and center freezing disabled and the soft term active.
pub fn objective_check(state: &TrainState, view: &View, patch_size: usize, h: f64) -> Result<GradCheckReport> {
    let reg = state.config.regularization;
    if reg.shape_freeze || reg.center_freeze {
        return Err(Error::InvalidConfig("objective check needs shape_freeze and center_freeze off".into()));
    }
    let analytic = state.objective(view, &[], patch_size)?.grads;
    let at = |f: &GaussianField, m: &ColorModel| {
        let mut s = TrainState::from_parts(state.config.clone(), f.clone(), m.clone(), state.extent)?;
        s.iter = state.iter;
        Ok::<_, Error>(s)
    };
    let tau = state.config.weights.tau;
    let delta = state.config.weights.delta;
    let cam = &view.camera;
    let mono = view.mono_depth.as_ref().ok_or_else(|| Error::InvalidConfig("view has no monocular depth".into()))?;
    let grid = partition(cam.width, cam.height, patch_size)?;
    let bg = Vector3::from(state.config.background);

    let mut groups = GradGroup::GEOMETRY.to_vec();
    match &state.model {
        ColorModel::Sh => groups.push(GradGroup::Color),
        ColorModel::Neural(_) => groups.extend([GradGroup::NeuralTables, GradGroup::NeuralMlp]),
    }
    let opts = CheckOptions {
        h,
        groups,
        max_entries: 600,
        ..Default::default()
    };
    check_against(
        &state.field,
        &state.model,
        &analytic,
        |f, m| Ok(at(f, m)?.objective(view, &[], patch_size)?.total),
        |f, m| {
            let kinds = [RenderKind::Color, RenderKind::HardDepth(tau), RenderKind::Depth];
            let mut hs = DefaultHasher::new();
            structure_signature(&kinds, f, cam, m)?.hash(&mut hs);
            // L1 and the tolerant L2 hinge are kinks of the loss itself.
            let RenderOutput::Image(img) = render_output(RenderKind::Color, f, cam, m, bg)? else {
                unreachable!("color render")
            };
            for (a, b) in img.rgb.iter().zip(&view.image.rgb) {
                for c in 0..3 {
                    (a[c] > b[c]).hash(&mut hs);
                }
            }
            let frame = Frame::prepare(f, cam)?;
            for kind in [RenderKind::HardDepth(tau), RenderKind::Depth] {
                let d = frame.render_depth(kind)?;
                for mode in [NormMode::Global, NormMode::Local] {
                    let a = normalize(&d, &grid, mode, Epsilon::ImageStd)?;
                    let b = normalize(mono, &grid, mode, Epsilon::ImageStd)?;
                    for (x, y) in a.values.iter().zip(&b.values) {
                        ((x - y).abs() > delta).hash(&mut hs);
                    }
                }
            }
            Ok(hs.finish())
        },
        &opts,
    )
}
