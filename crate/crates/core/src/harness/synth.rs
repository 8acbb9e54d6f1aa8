//! Synthetic sparse-view scenes with ground-truth and corrupted depth.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::io::{quantize_depth, quantize_image};
use super::{Dataset, View};
use crate::camera::Camera;
use crate::color::sh::SH_C0;
use crate::error::{Error, Result};
use crate::field::{logit, Aabb, ColorMode, GaussianField, GaussianPrimitive};
use crate::raster::{render_color, render_depth, DepthMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    TexturedPlanes,
    GaussianClusters,
    SphereShell,
}

/// Cameras on a horizontal arc around `lookat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRing {
    /// Distance from each camera to `lookat`.
    pub radius: f64,
    pub count: usize,
    pub lookat: [f64; 3],
    /// Angular span of the arc; 360 gives a full ring.
    pub arc_degrees: f64,
    /// Vertical offset of the cameras (world +y is image-down).
    pub height: f64,
}

impl Default for CameraRing {
    fn default() -> Self {
        Self {
            radius: 3.0,
            count: 9,
            lookat: [0.0, 0.0, 3.0],
            arc_degrees: 30.0,
            height: 0.0,
        }
    }
}

/// Monocular-like corruption `a·d + b + N(0, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Corruption {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

impl Default for Corruption {
    fn default() -> Self {
        Self { a: 1.0, b: 0.0, sigma: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub primitives: usize,
    /// Near and far extent of the content, measured along the view axis.
    pub depth_range: [f64; 2],
    /// Planes for textured-planes, clusters for gaussian-clusters.
    pub layers: usize,
    /// Texture cycles across a plane.
    pub texture_frequency: f64,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    pub ring: CameraRing,
    /// Indices into the ring used for training; the rest are test views.
    pub train_views: Vec<usize>,
    pub corruption: Corruption,
    pub background: [f64; 3],
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            kind: SceneKind::TexturedPlanes,
            primitives: 1500,
            depth_range: [2.0, 4.0],
            layers: 2,
            texture_frequency: 2.0,
            width: 48,
            height: 48,
            focal: 48.0,
            ring: CameraRing::default(),
            train_views: vec![0, 4, 8],
            corruption: Corruption::default(),
            background: [0.0; 3],
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let [near, far] = self.depth_range;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.primitives == 0 || self.layers == 0 || self.ring.count == 0 {
            return bad("primitive, layer and camera counts must be at least 1".into());
        }
        if !(near > 0.0 && far >= near) {
            return bad(format!("depth range {near}..{far} must be positive and ordered"));
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return bad("image size and focal length must be positive".into());
        }
        if self.train_views.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&i) = self.train_views.iter().find(|&&i| i >= self.ring.count) {
            return bad(format!("training view {i} is outside the ring of {}", self.ring.count));
        }
        if !(self.corruption.sigma >= 0.0) {
            return bad("corruption sigma must be non-negative".into());
        }
        Ok(())
    }

    pub fn background(&self) -> Vector3<f64> {
        Vector3::from(self.background)
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        let r = &self.ring;
        let lookat = Vector3::from(r.lookat);
        let n = r.count;
        let span = r.arc_degrees.to_radians();
        let full = (r.arc_degrees - 360.0).abs() < 1e-9;
        let eyes: Vec<Vector3<f64>> = (0..n)
            .map(|i| {
                let t = if full {
                    span * i as f64 / n as f64
                } else if n == 1 {
                    0.0
                } else {
                    -span / 2.0 + span * i as f64 / (n - 1) as f64
                };
                lookat + Vector3::new(r.radius * t.sin(), r.height, -r.radius * t.cos())
            })
            .collect();
        if r.radius <= 0.0 || (n > 1 && eyes.iter().all(|e| (e - eyes[0]).norm() < 1e-12)) {
            return Err(Error::DegenerateCameraRing);
        }
        eyes.iter()
            .map(|&e| Camera::look_at(e, lookat, -Vector3::y(), self.focal, self.width, self.height))
            .collect()
    }
}

/// A generated dataset with the field that rendered it.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub dataset: Dataset,
    pub ground_truth: GaussianField,
}

fn sh0(rgb: Vector3<f64>) -> Vec<f64> {
    ((rgb - Vector3::repeat(0.5)) / SH_C0).iter().copied().collect()
}

fn flat_prim(center: Vector3<f64>, s_xy: f64, s_z: f64, opacity: f64, rgb: Vector3<f64>) -> GaussianPrimitive {
    GaussianPrimitive {
        center,
        log_scale: Vector3::new(s_xy.ln(), s_xy.ln(), s_z.ln()),
        rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
        opacity_logit: logit(opacity),
        color: sh0(rgb),
    }
}

/// Half extent of the union of the camera frusta at world depth `z`.
fn half_extent(spec: &SceneSpec, z: f64) -> (f64, f64) {
    let lateral = spec.ring.radius * (spec.ring.arc_degrees.to_radians() / 2.0).sin().abs();
    let hx = z * spec.width as f64 / (2.0 * spec.focal) + lateral;
    let hy = z * spec.height as f64 / (2.0 * spec.focal) + spec.ring.height.abs();
    (hx * 1.15, hy * 1.15)
}

fn textured_planes(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<GaussianPrimitive> {
    let [near, far] = spec.depth_range;
    let eye_z = spec.ring.lookat[2] - spec.ring.radius;
    let layers = spec.layers;
    // Each plane is a rectangle; every plane but the farthest covers only
    // part of the view so the farther ones stay visible.
    let rects: Vec<(f64, [f64; 4])> = (0..layers)
        .map(|k| {
            let depth = if layers == 1 {
                near
            } else {
                near + (far - near) * k as f64 / (layers - 1) as f64
            };
            let z = eye_z + depth;
            let (hx, hy) = half_extent(spec, depth);
            let rect = if k + 1 == layers {
                [-hx, hx, -hy, hy]
            } else {
                let w = hx * rng.random_range(0.45..0.65);
                let h = hy * rng.random_range(0.5..0.8);
                let cx = rng.random_range(-0.4..0.4) * hx;
                let cy = rng.random_range(-0.3..0.3) * hy;
                [cx - w, cx + w, cy - h, cy + h]
            };
            (z, rect)
        })
        .collect();
    let area: f64 = rects.iter().map(|(_, r)| (r[1] - r[0]) * (r[3] - r[2])).sum();
    let spacing = (area / spec.primitives as f64).sqrt();
    let f = spec.texture_frequency;
    let mut prims = Vec::with_capacity(spec.primitives);
    for (k, (z, r)) in rects.iter().enumerate() {
        let tint = Vector3::new(rng.random_range(0.0..6.3), rng.random_range(0.0..6.3), rng.random_range(0.0..6.3));
        let (w, h) = (r[1] - r[0], r[3] - r[2]);
        let nx = (w / spacing).round().max(1.0) as usize;
        let ny = (h / spacing).round().max(1.0) as usize;
        let (sx, sy) = (w / nx as f64, h / ny as f64);
        for j in 0..ny {
            for i in 0..nx {
                let u = (i as f64 + 0.5) / nx as f64;
                let v = (j as f64 + 0.5) / ny as f64;
                let tau = std::f64::consts::TAU;
                let rgb = Vector3::from_fn(|c, _| {
                    0.5 + 0.4 * (tau * f * u + tint[c]).sin() * (tau * f * v + 0.7 * tint[c] + k as f64).cos()
                });
                let center = Vector3::new(r[0] + u * w, r[2] + v * h, *z);
                prims.push(flat_prim(center, 0.6 * sx.max(sy), 0.05 * sx.min(sy), 0.95, rgb));
            }
        }
    }
    prims
}

fn gaussian_clusters(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Vec<GaussianPrimitive> {
    let [near, far] = spec.depth_range;
    let eye_z = spec.ring.lookat[2] - spec.ring.radius;
    let per = spec.primitives.div_ceil(spec.layers);
    let mut prims = Vec::with_capacity(spec.primitives);
    for _ in 0..spec.layers {
        let depth = rng.random_range(near..=far);
        let (hx, hy) = half_extent(spec, depth);
        let center = Vector3::new(rng.random_range(-0.6..0.6) * hx, rng.random_range(-0.6..0.6) * hy, eye_z + depth);
        let spread = 0.15 * hx.min(hy);
        let rgb = Vector3::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
        let normal = Normal::new(0.0, spread).expect("positive spread");
        for _ in 0..per.min(spec.primitives - prims.len()) {
            let off = Vector3::from_fn(|_, _| normal.sample(rng));
            let s = spread * rng.random_range(0.15..0.35);
            let shade: Vector3<f64> = rgb * rng.random_range(0.8..1.1);
            prims.push(GaussianPrimitive {
                center: center + off,
                log_scale: Vector3::repeat(s.ln()),
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                opacity_logit: logit(0.8),
                color: sh0(shade.map(|v| v.clamp(0.0, 1.0))),
            });
        }
    }
    prims
}

fn sphere_shell(spec: &SceneSpec, _rng: &mut ChaCha8Rng) -> Vec<GaussianPrimitive> {
    let [near, far] = spec.depth_range;
    let radius = ((far - near) / 2.0).max(1e-3);
    let center = Vector3::from(spec.ring.lookat);
    let n = spec.primitives;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let s = radius * (4.0 / n as f64).sqrt();
    (0..n)
        .map(|i| {
            let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - y * y).sqrt();
            let t = golden * i as f64;
            let normal = Vector3::new(r * t.cos(), y, r * t.sin());
            let rgb = normal.map(|v| 0.5 + 0.4 * v);
            GaussianPrimitive {
                center: center + normal * radius,
                log_scale: Vector3::repeat(s.ln()),
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                opacity_logit: logit(0.9),
                color: sh0(rgb),
            }
        })
        .collect()
}

/// Applies `a·d + b + noise` to a ground-truth depth map.
pub fn corrupt_depth(gt: &DepthMap, c: &Corruption, rng: &mut ChaCha8Rng) -> Result<DepthMap> {
    let mut out = gt.clone();
    if c.sigma > 0.0 {
        let normal = Normal::new(0.0, c.sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        out.depth.iter_mut().for_each(|d| *d = c.a * *d + c.b + normal.sample(rng));
    } else if (c.a, c.b) != (1.0, 0.0) {
        out.depth.iter_mut().for_each(|d| *d = c.a * *d + c.b);
    }
    Ok(out)
}

/// Builds the ground-truth field for `spec`, renders every ring camera and
/// splits the views. Images are rounded to 8 bits and depth maps to 32-bit
/// floats, so saving and reloading reproduces the dataset exactly.
pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<SynthScene> {
    spec.validate()?;
    let cameras = spec.cameras()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prims = match spec.kind {
        SceneKind::TexturedPlanes => textured_planes(spec, &mut rng),
        SceneKind::GaussianClusters => gaussian_clusters(spec, &mut rng),
        SceneKind::SphereShell => sphere_shell(spec, &mut rng),
    };
    let field = GaussianField::from_primitives(ColorMode::Sh(0), prims)?;
    let tight = field.bounds().ok_or(Error::EmptyField)?;
    let pad = Vector3::repeat(0.05 * tight.diagonal());
    let bounds = Aabb::new(tight.min - pad, tight.max + pad);
    let colors: Vec<Vector3<f64>> = field
        .primitives()
        .iter()
        .map(|p| Vector3::new(p.color[0], p.color[1], p.color[2]) * SH_C0 + Vector3::repeat(0.5))
        .collect();

    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, cam) in cameras.into_iter().enumerate() {
        let image = quantize_image(&render_color(&field, &cam, &colors, spec.background())?);
        let gt = quantize_depth(&render_depth(&field, &cam)?);
        let mono = quantize_depth(&corrupt_depth(&gt, &spec.corruption, &mut noise_rng)?);
        let is_train = spec.train_views.contains(&i);
        let view = View {
            name: format!("{}_{i:03}", if is_train { "train" } else { "test" }),
            image,
            camera: cam,
            mono_depth: Some(mono),
            gt_depth: Some(gt),
        };
        if is_train {
            train.push(view);
        } else {
            test.push(view);
        }
    }
    Ok(SynthScene {
        dataset: Dataset { train, test, bounds },
        ground_truth: field,
    })
}
