//! Front-to-back compositing of projected Gaussians.
//!
//! A [`Frame`] projects and depth-sorts the field once per camera and bins
//! primitives into screen tiles; color, depth, hard-depth and soft-depth
//! renders all read from the same frame. Pixel centers sit at
//! `(col + 0.5, row + 0.5)`.

mod reference;

pub use reference::{composite_reference, ReferenceRules, ReferenceValue};

use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::GaussianField;
use crate::projection::{project, Projected2D};

/// Upper bound on per-pixel rendering opacity.
pub const ALPHA_MAX: f64 = 0.99;
/// Contributions with rendering opacity below this are skipped.
pub const ALPHA_SKIP: f64 = 1.0 / 255.0;
/// Accumulation stops once transmittance would fall below this.
pub const T_MIN: f64 = 1e-4;
/// Hard-depth opacity used in training.
pub const DEFAULT_TAU: f64 = 0.95;

const TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RenderKind {
    Color,
    Depth,
    HardDepth(f64),
    SoftDepth,
}

impl RenderKind {
    pub fn is_depth(self) -> bool {
        !matches!(self, RenderKind::Color)
    }
}

/// RGB raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<Vector3<f64>>,
}

impl ImageBuffer {
    pub fn filled(width: usize, height: usize, color: Vector3<f64>) -> Self {
        Self {
            width,
            height,
            rgb: vec![color; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Vector3<f64>) -> Self {
        let mut rgb = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                rgb.push(f(x, y));
            }
        }
        Self { width, height, rgb }
    }

    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.rgb[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.rgb.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rgb.is_empty()
    }

    /// Single channel as a plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.rgb.iter().map(|p| p[c]).collect()
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }
}

/// Scalar depth raster with accumulated opacity.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub accum_alpha: Vec<f64>,
}

impl DepthMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            depth: vec![0.0; width * height],
            accum_alpha: vec![0.0; width * height],
        }
    }

    /// Depth values with full coverage.
    pub fn from_depth(width: usize, height: usize, depth: Vec<f64>) -> Result<Self> {
        if depth.len() != width * height {
            return Err(Error::dims(width * height, depth.len()));
        }
        Ok(Self {
            width,
            height,
            depth,
            accum_alpha: vec![1.0; width * height],
        })
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn same_dims(&self, other: &DepthMap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::dims(
                format!("{}x{}", self.width, self.height),
                format!("{}x{}", other.width, other.height),
            ));
        }
        Ok(())
    }
}

/// One primitive's contribution to one pixel, recorded for the backward pass.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    pub index: u32,
    /// Screen-space weight `𝒢(x_p)`.
    pub weight: f64,
    /// Rendering opacity after clamping; for hard depth this is the
    /// attenuation weight `τ(1−τ)^(k−1)`.
    pub alpha: f64,
    pub clamped: bool,
    /// Transmittance in front of this contribution.
    pub trans: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Projected, sorted and tile-binned primitives for one camera.
#[derive(Debug, Clone)]
pub struct Frame {
    width: usize,
    height: usize,
    projected: Vec<Option<Projected2D>>,
    opacity: Vec<f64>,
    tiles_x: usize,
    tiles: Vec<Vec<u32>>,
    visible: Vec<bool>,
}

impl Frame {
    pub fn prepare(field: &GaussianField, cam: &Camera) -> Result<Self> {
        cam.validate()?;
        let prims = field.primitives();
        let projected: Vec<Option<Projected2D>> = prims
            .par_iter()
            .map(|p| project(p, cam))
            .collect::<Result<_>>()?;
        let opacity: Vec<f64> = prims.iter().map(|p| p.opacity()).collect();

        let mut order: Vec<u32> = (0..prims.len() as u32)
            .filter(|&i| projected[i as usize].is_some())
            .collect();
        order.sort_by(|&a, &b| {
            let za = projected[a as usize].as_ref().map_or(0.0, |p| p.view_z);
            let zb = projected[b as usize].as_ref().map_or(0.0, |p| p.view_z);
            za.total_cmp(&zb).then(a.cmp(&b))
        });

        let tiles_x = cam.width.div_ceil(TILE);
        let tiles_y = cam.height.div_ceil(TILE);
        let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
        let mut visible = vec![false; prims.len()];
        for &i in &order {
            let p = projected[i as usize].as_ref().expect("filtered");
            let Some((x0, x1, y0, y1)) = pixel_rect(p, cam.width, cam.height) else {
                continue;
            };
            visible[i as usize] = true;
            for ty in y0 / TILE..=y1 / TILE {
                for tx in x0 / TILE..=x1 / TILE {
                    tiles[ty * tiles_x + tx].push(i);
                }
            }
        }
        Ok(Self {
            width: cam.width,
            height: cam.height,
            projected,
            opacity,
            tiles_x,
            tiles,
            visible,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn projected(&self) -> &[Option<Projected2D>] {
        &self.projected
    }

    /// Number of primitives whose support touches the image.
    pub fn visible_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    pub fn is_visible(&self, index: usize) -> bool {
        self.visible[index]
    }

    #[inline]
    fn candidates(&self, x: usize, y: usize) -> &[u32] {
        &self.tiles[(y / TILE) * self.tiles_x + x / TILE]
    }

    /// Walks the sorted contributors of one pixel. `visit` receives each
    /// accepted contribution; returns the final transmittance.
    #[inline]
    pub(crate) fn trace_pixel(&self, kind: RenderKind, x: usize, y: usize, mut visit: impl FnMut(&Contribution)) -> f64 {
        let px = x as f64 + 0.5;
        let py = y as f64 + 0.5;
        let mut trans = 1.0;
        for &i in self.candidates(x, y) {
            let p = self.projected[i as usize].as_ref().expect("binned primitives are projected");
            let dx = px - p.mean2d.x;
            let dy = py - p.mean2d.y;
            if dx * dx + dy * dy > p.radius * p.radius {
                continue;
            }
            let g = (-0.5 * p.power(dx, dy)).exp().clamp(0.0, 1.0);
            match kind {
                RenderKind::HardDepth(tau) => {
                    if tau * g < ALPHA_SKIP {
                        continue;
                    }
                    let next = trans * (1.0 - tau);
                    if next < T_MIN {
                        break;
                    }
                    visit(&Contribution {
                        index: i,
                        weight: g,
                        alpha: tau * trans,
                        clamped: false,
                        trans,
                        dx,
                        dy,
                    });
                    trans = next;
                }
                _ => {
                    let raw = self.opacity[i as usize] * g;
                    let clamped = raw > ALPHA_MAX;
                    let alpha = if clamped { ALPHA_MAX } else { raw };
                    if alpha < ALPHA_SKIP {
                        continue;
                    }
                    let next = trans * (1.0 - alpha);
                    if next < T_MIN {
                        break;
                    }
                    visit(&Contribution {
                        index: i,
                        weight: g,
                        alpha,
                        clamped,
                        trans,
                        dx,
                        dy,
                    });
                    trans = next;
                }
            }
        }
        trans
    }

    pub fn render_color(&self, colors: &[Vector3<f64>], background: Vector3<f64>) -> Result<ImageBuffer> {
        if colors.len() != self.projected.len() {
            return Err(Error::dims(self.projected.len(), colors.len()));
        }
        let w = self.width;
        let mut rgb = vec![Vector3::zeros(); w * self.height];
        rgb.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, out) in row.iter_mut().enumerate() {
                let mut c = Vector3::zeros();
                let t = self.trace_pixel(RenderKind::Color, x, y, |k| {
                    c += colors[k.index as usize] * (k.alpha * k.trans);
                });
                c += background * t;
                *out = c.map(|v| v.clamp(0.0, 1.0));
            }
        });
        Ok(ImageBuffer {
            width: w,
            height: self.height,
            rgb,
        })
    }

    /// Depth render for any depth kind. Soft depth shares the forward pass
    /// with ordinary depth.
    pub fn render_depth(&self, kind: RenderKind) -> Result<DepthMap> {
        let kind = match kind {
            RenderKind::Color => {
                return Err(Error::InvalidConfig("color is not a depth render".into()));
            }
            RenderKind::SoftDepth => RenderKind::Depth,
            RenderKind::HardDepth(tau) if !(tau > 0.0 && tau < 1.0) => {
                return Err(Error::InvalidConfig(format!("tau must lie in (0,1), got {tau}")));
            }
            k => k,
        };
        let w = self.width;
        let mut depth = vec![0.0; w * self.height];
        let mut accum = vec![0.0; w * self.height];
        depth
            .par_chunks_mut(w)
            .zip(accum.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (drow, arow))| {
                for x in 0..w {
                    let mut d = 0.0;
                    let mut a = 0.0;
                    self.trace_pixel(kind, x, y, |k| {
                        let p = self.projected[k.index as usize].as_ref().expect("projected");
                        let wgt = match kind {
                            RenderKind::HardDepth(_) => k.alpha * k.weight,
                            _ => k.alpha * k.trans,
                        };
                        d += p.dist * wgt;
                        a += wgt;
                    });
                    drow[x] = d;
                    arow[x] = a.clamp(0.0, 1.0);
                }
            });
        Ok(DepthMap {
            width: w,
            height: self.height,
            depth,
            accum_alpha: accum,
        })
    }
}

fn pixel_rect(p: &Projected2D, width: usize, height: usize) -> Option<(usize, usize, usize, usize)> {
    // Pixel centers at +0.5; include every center within the radius.
    let x0 = (p.mean2d.x - p.radius - 0.5).ceil().max(0.0);
    let x1 = (p.mean2d.x + p.radius - 0.5).floor().min(width as f64 - 1.0);
    let y0 = (p.mean2d.y - p.radius - 0.5).ceil().max(0.0);
    let y1 = (p.mean2d.y + p.radius - 0.5).floor().min(height as f64 - 1.0);
    if !(x0 <= x1 && y0 <= y1) {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Renders per-primitive colors over a constant background.
pub fn render_color(
    field: &GaussianField,
    cam: &Camera,
    colors: &[Vector3<f64>],
    background: Vector3<f64>,
) -> Result<ImageBuffer> {
    Frame::prepare(field, cam)?.render_color(colors, background)
}

/// Expected distance-to-center depth.
pub fn render_depth(field: &GaussianField, cam: &Camera) -> Result<DepthMap> {
    Frame::prepare(field, cam)?.render_depth(RenderKind::Depth)
}

/// Depth with every opacity replaced by `tau`, attenuated by `(1−τ)^(k−1)`
/// over the covering primitives in depth order.
pub fn render_hard_depth(field: &GaussianField, cam: &Camera, tau: f64) -> Result<DepthMap> {
    Frame::prepare(field, cam)?.render_depth(RenderKind::HardDepth(tau))
}

/// Same values as [`render_depth`]; differs only in which parameters its
/// gradient reaches.
pub fn render_soft_depth(field: &GaussianField, cam: &Camera) -> Result<DepthMap> {
    Frame::prepare(field, cam)?.render_depth(RenderKind::SoftDepth)
}

/// Pixel center coordinates.
pub fn pixel_center(x: usize, y: usize) -> Vector2<f64> {
    Vector2::new(x as f64 + 0.5, y as f64 + 0.5)
}
