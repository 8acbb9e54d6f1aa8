//! Neural color renderer: hash-grid encoding of the primitive center, a
//! position MLP stage whose output is cached, and a view stage that merges
//! an SH encoding of the view direction.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::hash::{EncodeTape, HashGridConfig, HashGridEncoder};
use super::mlp::{ColorMlp, MlpConfig, MlpTape};
use super::sh;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::{Aabb, GaussianField};

/// SH degree of the view-direction encoding (25 values).
pub const DIRECTION_DEGREE: usize = 4;

const CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq)]
struct FeatureCache {
    field_version: u64,
    weights_version: u64,
    features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralColorRenderer {
    pub encoder: HashGridEncoder,
    pub mlp: ColorMlp,
    weights_version: u64,
    cache: Option<FeatureCache>,
    caching: bool,
}

/// Per-primitive forward record.
#[derive(Debug, Clone)]
pub(crate) struct NeuralTape {
    encode: EncodeTape,
    position: MlpTape,
    view: MlpTape,
    dir_jacobian: Vec<Vector3<f64>>,
    offset: Vector3<f64>,
}

/// Gradients of the renderer's own parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralGrads {
    pub tables: Vec<f64>,
    pub mlp: Vec<f64>,
}

impl NeuralGrads {
    pub fn zeros_like(r: &NeuralColorRenderer) -> Self {
        Self {
            tables: vec![0.0; r.encoder.tables.len()],
            mlp: vec![0.0; r.mlp.params.len()],
        }
    }

    pub fn add_scaled(&mut self, other: &NeuralGrads, k: f64) {
        self.tables.iter_mut().zip(&other.tables).for_each(|(a, b)| *a += k * b);
        self.mlp.iter_mut().zip(&other.mlp).for_each(|(a, b)| *a += k * b);
    }
}

pub(crate) fn view_direction(center: &Vector3<f64>, cam: &Camera) -> (Vector3<f64>, Vector3<f64>) {
    let offset = center - cam.center();
    let n = offset.norm();
    if n > 0.0 {
        (offset / n, offset)
    } else {
        (Vector3::z(), offset)
    }
}

/// Backpropagates through `dir = v / ‖v‖`.
pub(crate) fn normalize_vjp(offset: &Vector3<f64>, d_dir: &Vector3<f64>) -> Vector3<f64> {
    let n = offset.norm();
    if n == 0.0 {
        return Vector3::zeros();
    }
    let dir = offset / n;
    (d_dir - dir * dir.dot(d_dir)) / n
}

impl NeuralColorRenderer {
    pub fn new(grid: HashGridConfig, mlp: MlpConfig, bounds: Aabb, seed: u64) -> Result<Self> {
        if grid.output_dim() != mlp.input_dim {
            return Err(Error::InvalidConfig(format!(
                "encoding width {} does not match MLP input {}",
                grid.output_dim(),
                mlp.input_dim
            )));
        }
        if mlp.direction_dim != sh::basis_len(DIRECTION_DEGREE) {
            return Err(Error::InvalidConfig("direction encoding must have 25 values".into()));
        }
        if bounds.is_degenerate() {
            return Err(Error::InvalidConfig("encoder bounds are degenerate".into()));
        }
        Ok(Self {
            encoder: HashGridEncoder::new(grid, bounds, seed),
            mlp: ColorMlp::new(mlp, seed.wrapping_add(1)),
            weights_version: 0,
            cache: None,
            caching: true,
        })
    }

    pub fn weights_version(&self) -> u64 {
        self.weights_version
    }

    pub fn set_caching(&mut self, enabled: bool) {
        self.caching = enabled;
        if !enabled {
            self.cache = None;
        }
    }

    /// Mutable access to `(tables, mlp params)`; invalidates the cache.
    pub fn params_mut(&mut self) -> (&mut Vec<f64>, &mut Vec<f64>) {
        self.weights_version += 1;
        self.cache = None;
        (&mut self.encoder.tables, &mut self.mlp.params)
    }

    pub fn cache_is_valid(&self, field: &GaussianField) -> bool {
        self.cache
            .as_ref()
            .is_some_and(|c| c.field_version == field.version() && c.weights_version == self.weights_version && c.features.len() == field.len())
    }

    /// Stage-A features for every primitive.
    pub fn features(&self, field: &GaussianField) -> Vec<Vec<f64>> {
        field
            .primitives()
            .par_iter()
            .map(|p| self.mlp.position_stage(&self.encoder.encode(&p.center)).0)
            .collect()
    }

    /// Recomputes and stores the position-stage features.
    pub fn refresh_cache(&mut self, field: &GaussianField) {
        if !self.caching {
            return;
        }
        if self.cache_is_valid(field) {
            return;
        }
        self.cache = Some(FeatureCache {
            field_version: field.version(),
            weights_version: self.weights_version,
            features: self.features(field),
        });
    }

    /// Cached features, or an error if the cache is missing or stale.
    pub fn cached_features(&self, field: &GaussianField) -> Result<&[Vec<f64>]> {
        match &self.cache {
            Some(c) if self.cache_is_valid(field) => Ok(&c.features),
            Some(c) => Err(Error::StaleCache {
                cached: c.field_version.max(c.weights_version),
                current: field.version().max(self.weights_version),
            }),
            None => Err(Error::StaleCache {
                cached: 0,
                current: field.version().max(self.weights_version),
            }),
        }
    }

    fn view_colors(&self, field: &GaussianField, cam: &Camera, features: &[Vec<f64>]) -> Vec<Vector3<f64>> {
        field
            .primitives()
            .par_iter()
            .zip(features.par_iter())
            .map(|(p, feat)| {
                let (dir, _) = view_direction(&p.center, cam);
                let denc = sh::basis(DIRECTION_DEGREE, &dir);
                let (rgb, _) = self.mlp.view_stage(feat, &denc);
                Vector3::from(rgb)
            })
            .collect()
    }

    /// Colors using the cache when it is valid, computing fresh otherwise.
    pub fn colors(&self, field: &GaussianField, cam: &Camera) -> Vec<Vector3<f64>> {
        if self.caching {
            if let Ok(f) = self.cached_features(field) {
                return self.view_colors(field, cam, f);
            }
        }
        let f = self.features(field);
        self.view_colors(field, cam, &f)
    }

    /// Colors strictly from the cache.
    pub fn cached_colors(&self, field: &GaussianField, cam: &Camera) -> Result<Vec<Vector3<f64>>> {
        let f = self.cached_features(field)?;
        Ok(self.view_colors(field, cam, f))
    }

    pub(crate) fn forward(&self, field: &GaussianField, cam: &Camera) -> (Vec<Vector3<f64>>, Vec<NeuralTape>) {
        field
            .primitives()
            .par_iter()
            .map(|p| {
                let (enc, encode) = self.encoder.encode_with_tape(&p.center);
                let (feat, position) = self.mlp.position_stage(&enc);
                let (dir, offset) = view_direction(&p.center, cam);
                let (denc, dir_jacobian) = sh::basis_with_grad(DIRECTION_DEGREE, &dir);
                let (rgb, view) = self.mlp.view_stage(&feat, &denc);
                (
                    Vector3::from(rgb),
                    NeuralTape {
                        encode,
                        position,
                        view,
                        dir_jacobian,
                        offset,
                    },
                )
            })
            .unzip()
    }

    /// Returns per-primitive center gradients and, when `params` is set,
    /// the renderer's parameter gradients. Reductions run in fixed-size
    /// chunks merged in order, independent of the thread count.
    pub(crate) fn backward(
        &self,
        tapes: &[NeuralTape],
        d_rgb: &[Vector3<f64>],
        params: bool,
    ) -> (Vec<Vector3<f64>>, Option<NeuralGrads>) {
        let chunks: Vec<(Vec<Vector3<f64>>, Vec<f64>, Vec<(usize, f64)>)> = tapes
            .par_chunks(CHUNK)
            .zip(d_rgb.par_chunks(CHUNK))
            .map(|(tc, gc)| {
                let mut d_mlp = if params { vec![0.0; self.mlp.params.len()] } else { Vec::new() };
                let mut table_terms = Vec::new();
                let mut centers = Vec::with_capacity(tc.len());
                for (t, g) in tc.iter().zip(gc) {
                    if *g == Vector3::zeros() {
                        centers.push(Vector3::zeros());
                        continue;
                    }
                    let up = [g.x, g.y, g.z];
                    let dm = params.then_some(d_mlp.as_mut_slice());
                    let (d_feat, d_denc) = self.mlp.view_stage_vjp(&t.view, &up, dm);
                    let dm = params.then_some(d_mlp.as_mut_slice());
                    let d_enc = self.mlp.position_stage_vjp(&t.position, &d_feat, dm);
                    let mut d_dir = Vector3::zeros();
                    for (jk, dk) in t.dir_jacobian.iter().zip(&d_denc) {
                        d_dir += jk * *dk;
                    }
                    let d_pos = self.encoder.encode_vjp(&t.encode, &d_enc, None);
                    if params {
                        let f = self.encoder.config.features_per_entry;
                        for (level, lc) in t.encode.corners.iter().enumerate() {
                            for &(off, w) in lc {
                                for j in 0..f {
                                    table_terms.push((off + j, w * d_enc[level * f + j]));
                                }
                            }
                        }
                    }
                    centers.push(d_pos + normalize_vjp(&t.offset, &d_dir));
                }
                (centers, d_mlp, table_terms)
            })
            .collect();

        let mut centers = Vec::with_capacity(tapes.len());
        let mut grads = params.then(|| NeuralGrads::zeros_like(self));
        for (c, d_mlp, terms) in chunks {
            centers.extend(c);
            if let Some(g) = grads.as_mut() {
                g.mlp.iter_mut().zip(&d_mlp).for_each(|(a, b)| *a += b);
                for (off, v) in terms {
                    g.tables[off] += v;
                }
            }
        }
        (centers, grads)
    }
}
