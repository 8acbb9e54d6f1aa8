//! Analytic reverse-mode gradients of every render kind.
//!
//! The backward pass replays each pixel's contributors front to back,
//! then walks them in reverse with a running suffix sum. Per-row partial
//! gradients are merged in row order so results do not depend on the
//! number of worker threads.

pub mod gradcheck;

use nalgebra::{Matrix2, Vector2, Vector3, Vector4};
use rayon::prelude::*;

pub use gradcheck::{finite_diff_check, GradCheckReport, GradGroup, LossFn};

use crate::camera::Camera;
use crate::color::{ColorModel, ColorTape, NeuralGrads};
use crate::error::{Error, Result};
use crate::field::{FreezeMask, GaussianField};
use crate::projection::{project_vjp, ProjectionGrad};
use crate::raster::{Contribution, Frame, RenderKind};

/// Per-pixel cotangent of a render.
#[derive(Debug, Clone, Copy)]
pub enum Cotangent<'a> {
    Rgb(&'a [Vector3<f64>]),
    Depth(&'a [f64]),
}

impl Cotangent<'_> {
    fn len(&self) -> usize {
        match self {
            Cotangent::Rgb(v) => v.len(),
            Cotangent::Depth(v) => v.len(),
        }
    }
}

/// Gradients for every parameter group of a field.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub center: Vec<Vector3<f64>>,
    pub log_scale: Vec<Vector3<f64>>,
    pub rotation: Vec<Vector4<f64>>,
    /// With respect to the opacity logit.
    pub opacity: Vec<f64>,
    /// Flat `n × K` per-primitive color parameters.
    pub color: Vec<f64>,
    pub neural: Option<NeuralGrads>,
    /// Screen-space position gradient in pixels (densification statistic).
    pub mean2d: Vec<Vector2<f64>>,
}

impl ParamGrads {
    pub fn zeros(field: &GaussianField, model: &ColorModel) -> Self {
        let n = field.len();
        Self {
            center: vec![Vector3::zeros(); n],
            log_scale: vec![Vector3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            opacity: vec![0.0; n],
            color: vec![0.0; n * field.feature_dim()],
            neural: model.neural().map(NeuralGrads::zeros_like),
            mean2d: vec![Vector2::zeros(); n],
        }
    }

    /// `self += k·other`.
    pub fn add_scaled(&mut self, other: &ParamGrads, k: f64) {
        fn axpy<T: Copy + std::ops::AddAssign + std::ops::Mul<f64, Output = T>>(a: &mut [T], b: &[T], k: f64) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y * k);
        }
        axpy(&mut self.center, &other.center, k);
        axpy(&mut self.log_scale, &other.log_scale, k);
        axpy(&mut self.rotation, &other.rotation, k);
        axpy(&mut self.opacity, &other.opacity, k);
        axpy(&mut self.color, &other.color, k);
        axpy(&mut self.mean2d, &other.mean2d, k);
        if let (Some(a), Some(b)) = (self.neural.as_mut(), other.neural.as_ref()) {
            a.add_scaled(b, k);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scale.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.rotation.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity.iter().all(|x| x.is_finite())
            && self.color.iter().all(|x| x.is_finite())
            && self
                .neural
                .as_ref()
                .is_none_or(|n| n.tables.iter().chain(&n.mlp).all(|x| x.is_finite()))
    }

    /// Flattened view of one group.
    pub fn group(&self, g: GradGroup) -> Vec<f64> {
        match g {
            GradGroup::Center => self.center.iter().flat_map(|v| v.iter().copied()).collect(),
            GradGroup::Scale => self.log_scale.iter().flat_map(|v| v.iter().copied()).collect(),
            GradGroup::Rotation => self.rotation.iter().flat_map(|v| v.iter().copied()).collect(),
            GradGroup::Opacity => self.opacity.clone(),
            GradGroup::Color => self.color.clone(),
            GradGroup::NeuralTables => self.neural.as_ref().map(|n| n.tables.clone()).unwrap_or_default(),
            GradGroup::NeuralMlp => self.neural.as_ref().map(|n| n.mlp.clone()).unwrap_or_default(),
        }
    }

    /// True when every entry of the group is exactly zero.
    pub fn group_is_zero(&self, g: GradGroup) -> bool {
        self.group(g).iter().all(|&v| v == 0.0)
    }
}

/// Screen-space gradients of one primitive.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    color: Vector3<f64>,
    /// With respect to the activated opacity.
    alpha: f64,
    mean2d: Vector2<f64>,
    /// `[∂/∂C00, ∂/∂C01 (= ∂/∂C10), ∂/∂C11]`.
    conic: [f64; 3],
    dist: f64,
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        self.color += o.color;
        self.alpha += o.alpha;
        self.mean2d += o.mean2d;
        for k in 0..3 {
            self.conic[k] += o.conic[k];
        }
        self.dist += o.dist;
    }
}

/// Gradients of the screen-space quantities for every primitive.
fn screen_vjp(
    frame: &Frame,
    field: &GaussianField,
    kind: RenderKind,
    colors: Option<&[Vector3<f64>]>,
    background: Vector3<f64>,
    upstream: Cotangent<'_>,
) -> Result<Vec<ScreenGrad>> {
    let (w, h) = (frame.width(), frame.height());
    if upstream.len() != w * h {
        return Err(Error::dims(w * h, upstream.len()));
    }
    match (kind, upstream) {
        (RenderKind::Color, Cotangent::Rgb(_)) => {
            let c = colors.ok_or_else(|| Error::InvalidConfig("color render needs colors".into()))?;
            if c.len() != field.len() {
                return Err(Error::dims(field.len(), c.len()));
            }
        }
        (RenderKind::Color, Cotangent::Depth(_)) => {
            return Err(Error::dims("rgb cotangent", "depth cotangent"));
        }
        (_, Cotangent::Rgb(_)) => return Err(Error::dims("depth cotangent", "rgb cotangent")),
        _ => {}
    }
    let proj = frame.projected();
    let opacity: Vec<f64> = field.primitives().iter().map(|p| p.opacity()).collect();

    let rows: Vec<Vec<(u32, ScreenGrad)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            let mut contribs: Vec<Contribution> = Vec::new();
            for x in 0..w {
                let pix = y * w + x;
                let (g, bg) = match upstream {
                    Cotangent::Rgb(u) => (u[pix], background),
                    Cotangent::Depth(u) => (Vector3::new(u[pix], 0.0, 0.0), Vector3::zeros()),
                };
                if g == Vector3::zeros() {
                    continue;
                }
                contribs.clear();
                let t_final = frame.trace_pixel(kind, x, y, |c| contribs.push(*c));
                let value = |i: u32| -> Vector3<f64> {
                    match colors {
                        Some(c) if kind == RenderKind::Color => c[i as usize],
                        _ => Vector3::new(proj[i as usize].as_ref().map_or(0.0, |p| p.dist), 0.0, 0.0),
                    }
                };

                if let RenderKind::HardDepth(_) = kind {
                    for c in &contribs {
                        let p = proj[c.index as usize].as_ref().expect("projected");
                        let mut sg = ScreenGrad {
                            dist: g.x * c.alpha * c.weight,
                            ..Default::default()
                        };
                        weight_vjp(&mut sg, p.conic, c, g.x * c.alpha * p.dist);
                        out.push((c.index, sg));
                    }
                    continue;
                }

                let mut suffix = bg * t_final;
                for c in contribs.iter().rev() {
                    let v = value(c.index);
                    let wgt = c.alpha * c.trans;
                    let d_alpha_t = g.dot(&v) * c.trans - g.dot(&suffix) / (1.0 - c.alpha);
                    suffix += v * wgt;
                    let mut sg = ScreenGrad::default();
                    match kind {
                        RenderKind::Color => sg.color = g * wgt,
                        RenderKind::Depth => sg.dist = g.x * wgt,
                        _ => {}
                    }
                    if !c.clamped {
                        sg.alpha = d_alpha_t * c.weight;
                        if kind != RenderKind::SoftDepth {
                            let p = proj[c.index as usize].as_ref().expect("projected");
                            weight_vjp(&mut sg, p.conic, c, d_alpha_t * opacity[c.index as usize]);
                        }
                    }
                    out.push((c.index, sg));
                }
            }
            out
        })
        .collect();

    let mut grads = vec![ScreenGrad::default(); field.len()];
    for row in rows {
        for (i, sg) in row {
            grads[i as usize].add(&sg);
        }
    }
    Ok(grads)
}

/// Chain rule through `𝒢 = exp(−½ Δᵀ C Δ)` with `Δ = pixel − mean2d`.
#[inline]
fn weight_vjp(sg: &mut ScreenGrad, conic: Matrix2<f64>, c: &Contribution, d_weight: f64) {
    let g = d_weight * c.weight;
    let delta = Vector2::new(c.dx, c.dy);
    sg.mean2d += conic * delta * g;
    sg.conic[0] += -0.5 * g * c.dx * c.dx;
    sg.conic[1] += -0.5 * g * c.dx * c.dy;
    sg.conic[2] += -0.5 * g * c.dy * c.dy;
}

/// Color-model inputs for a color VJP.
pub struct ColorInputs<'a> {
    pub model: &'a ColorModel,
    pub tape: &'a ColorTape,
    pub colors: &'a [Vector3<f64>],
}

/// VJP of a render against a prepared frame.
pub fn vjp_frame(
    frame: &Frame,
    kind: RenderKind,
    field: &GaussianField,
    cam: &Camera,
    color: Option<ColorInputs<'_>>,
    background: Vector3<f64>,
    upstream: Cotangent<'_>,
    mask: FreezeMask,
) -> Result<ParamGrads> {
    let model_for_zeros = color.as_ref().map(|c| c.model);
    let screen = screen_vjp(frame, field, kind, color.as_ref().map(|c| c.colors), background, upstream)?;
    let n = field.len();
    let mut out = match model_for_zeros {
        Some(m) => ParamGrads::zeros(field, m),
        None => ParamGrads::zeros(field, &ColorModel::Sh),
    };

    let soft = kind == RenderKind::SoftDepth;
    let hard = matches!(kind, RenderKind::HardDepth(_));
    let want_center = !mask.center && !soft;
    let want_scale = !mask.scale && !soft;
    let want_rotation = !mask.rotation && !soft;
    let want_opacity = !mask.opacity && !hard;

    let geom: Vec<Option<crate::projection::GeometryGrad>> = field
        .primitives()
        .par_iter()
        .zip(screen.par_iter())
        .zip(frame.projected().par_iter())
        .map(|((prim, sg), proj)| {
            if proj.is_none() || !(want_center || want_scale || want_rotation) {
                return Ok(None);
            }
            let up = ProjectionGrad {
                mean2d: sg.mean2d,
                conic: Matrix2::new(sg.conic[0], sg.conic[1], sg.conic[1], sg.conic[2]),
                dist: sg.dist,
            };
            if up.mean2d == Vector2::zeros() && up.conic == Matrix2::zeros() && up.dist == 0.0 {
                return Ok(None);
            }
            project_vjp(prim, cam, &up).map(Some)
        })
        .collect::<Result<_>>()?;

    for i in 0..n {
        out.mean2d[i] = screen[i].mean2d;
        if let Some(g) = &geom[i] {
            if want_center {
                out.center[i] = g.center;
            }
            if want_scale {
                out.log_scale[i] = g.log_scale;
            }
            if want_rotation {
                out.rotation[i] = g.rotation;
            }
        }
        if want_opacity {
            let a = field.primitives()[i].opacity();
            out.opacity[i] = screen[i].alpha * a * (1.0 - a);
        }
    }

    if kind == RenderKind::Color {
        let c = color.expect("checked in screen_vjp");
        let d_rgb: Vec<Vector3<f64>> = screen.iter().map(|s| s.color).collect();
        let cg = c.model.backward(field, cam, c.tape, &d_rgb, !mask.color)?;
        if !mask.color {
            out.color = cg.color;
            if cg.neural.is_some() {
                out.neural = cg.neural;
            }
        }
        if want_center {
            for (a, b) in out.center.iter_mut().zip(&cg.center) {
                *a += b;
            }
        }
    }
    Ok(out)
}

/// Exact reverse-mode gradient of `⟨upstream, render(kind)⟩`.
///
/// Hard depth never produces opacity gradients and soft depth produces
/// nothing but opacity gradients, regardless of `mask`.
pub fn vjp_render(
    kind: RenderKind,
    field: &GaussianField,
    cam: &Camera,
    model: &ColorModel,
    background: Vector3<f64>,
    upstream: Cotangent<'_>,
    mask: FreezeMask,
) -> Result<ParamGrads> {
    let frame = Frame::prepare(field, cam)?;
    if kind == RenderKind::Color {
        let (colors, tape) = model.forward(field, cam)?;
        let inputs = ColorInputs {
            model,
            tape: &tape,
            colors: &colors,
        };
        let mut g = vjp_frame(&frame, kind, field, cam, Some(inputs), background, upstream, mask)?;
        if g.neural.is_none() {
            g.neural = model.neural().map(NeuralGrads::zeros_like);
        }
        Ok(g)
    } else {
        let mut g = vjp_frame(&frame, kind, field, cam, None, background, upstream, mask)?;
        g.neural = model.neural().map(NeuralGrads::zeros_like);
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{HashGridConfig, MlpConfig, NeuralColorRenderer};
    use crate::field::{logit, Aabb, ColorMode, GaussianPrimitive};
    use gradcheck::linear_loss;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scene(n: usize, mode: ColorMode, seed: u64) -> (GaussianField, Camera) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = mode.feature_dim();
        let prims = (0..n)
            .map(|_| GaussianPrimitive {
                center: Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3)),
                log_scale: Vector3::new(
                    rng.random_range(-2.6..-1.6),
                    rng.random_range(-2.6..-1.6),
                    rng.random_range(-2.6..-1.6),
                ),
                rotation: Vector4::new(1.0, rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
                opacity_logit: logit(rng.random_range(0.2..0.8)),
                color: (0..k).map(|_| rng.random_range(-0.3..0.3)).collect(),
            })
            .collect();
        let field = GaussianField::from_primitives(mode, prims).unwrap();
        let cam = Camera::look_at(
            Vector3::new(0.2, -0.1, -3.0),
            Vector3::zeros(),
            -Vector3::y(),
            40.0,
            24,
            20,
        )
        .unwrap();
        (field, cam)
    }

    fn weights(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn check(kind: RenderKind, field: &GaussianField, cam: &Camera, model: &ColorModel) -> GradCheckReport {
        let len = cam.pixel_count() * if kind == RenderKind::Color { 3 } else { 1 };
        let loss = linear_loss(weights(len, 11));
        let bg = Vector3::new(0.1, 0.2, 0.3);
        finite_diff_check(field, cam, model, kind, &*loss, 1e-6, FreezeMask::NONE, bg).unwrap()
    }

    fn assert_report(r: &GradCheckReport, tol: f64) {
        assert!(r.passes(tol), "{r}");
        for g in &r.groups {
            if g.checked > 0 && g.max_rel.is_finite() && g.max_grad > 0.0 {
                assert!(g.skipped * 4 <= g.checked + g.skipped, "too many kinks skipped:\n{r}");
            }
        }
    }

    #[test]
    fn color_gradients_sh() {
        let (field, cam) = scene(6, ColorMode::Sh(2), 1);
        let r = check(RenderKind::Color, &field, &cam, &ColorModel::Sh);
        assert_report(&r, 1e-4);
        assert!(r.group(GradGroup::Center).unwrap().max_grad > 0.0);
    }

    #[test]
    fn depth_gradients() {
        let (field, cam) = scene(6, ColorMode::Sh(0), 2);
        assert_report(&check(RenderKind::Depth, &field, &cam, &ColorModel::Sh), 1e-4);
    }

    #[test]
    fn hard_depth_gradients_skip_opacity() {
        let (field, cam) = scene(6, ColorMode::Sh(0), 3);
        let r = check(RenderKind::HardDepth(0.95), &field, &cam, &ColorModel::Sh);
        assert_report(&r, 1e-4);
        let op = r.group(GradGroup::Opacity).unwrap();
        assert_eq!(op.max_abs, 0.0);
    }

    #[test]
    fn soft_depth_gradients_only_opacity() {
        let (field, cam) = scene(6, ColorMode::Sh(0), 4);
        let r = check(RenderKind::SoftDepth, &field, &cam, &ColorModel::Sh);
        assert_report(&r, 1e-4);
        for g in [GradGroup::Center, GradGroup::Scale, GradGroup::Rotation] {
            assert_eq!(r.group(g).unwrap().max_abs, 0.0);
        }
        assert!(r.group(GradGroup::Opacity).unwrap().max_grad > 0.0);
    }

    #[test]
    fn neural_color_gradients() {
        let (field, cam) = scene(5, ColorMode::Neural, 5);
        let grid = HashGridConfig {
            log2_table_size: 10,
            ..Default::default()
        };
        let bounds = Aabb::new(Vector3::repeat(-1.0), Vector3::repeat(1.0));
        let mut n = NeuralColorRenderer::new(grid, MlpConfig::default(), bounds, 9).unwrap();
        // Lift the tables off their tiny initialization so the center
        // gradient through the encoding is visible.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        n.params_mut().0.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        let model = ColorModel::Neural(Box::new(n));
        let r = check(RenderKind::Color, &field, &cam, &model);
        assert_report(&r, 1e-4);
        assert!(r.group(GradGroup::NeuralTables).unwrap().max_grad > 0.0);
    }

    #[test]
    fn frozen_groups_are_zero() {
        let (field, cam) = scene(4, ColorMode::Sh(1), 6);
        let up = vec![Vector3::repeat(1.0); cam.pixel_count()];
        let g = vjp_render(
            RenderKind::Color,
            &field,
            &cam,
            &ColorModel::Sh,
            Vector3::zeros(),
            Cotangent::Rgb(&up),
            FreezeMask::HARD_DEPTH,
        )
        .unwrap();
        assert!(g.group_is_zero(GradGroup::Scale));
        assert!(g.group_is_zero(GradGroup::Rotation));
        assert!(g.group_is_zero(GradGroup::Opacity));
        assert!(g.group_is_zero(GradGroup::Color));
        assert!(!g.group_is_zero(GradGroup::Center));
    }

    #[test]
    fn cotangent_kind_mismatch_is_rejected() {
        let (field, cam) = scene(2, ColorMode::Sh(0), 7);
        let up = vec![0.0; cam.pixel_count()];
        let r = vjp_render(
            RenderKind::Color,
            &field,
            &cam,
            &ColorModel::Sh,
            Vector3::zeros(),
            Cotangent::Depth(&up),
            FreezeMask::NONE,
        );
        assert!(matches!(r, Err(Error::DimensionMismatch { .. })));
    }
}
