//! Gaussian primitives and the optimizable field.

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// How per-primitive color is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ColorMode {
    /// Spherical harmonics up to the given degree (0..=3), stored per primitive.
    Sh(u8),
    /// Colors come from the neural color renderer; primitives carry no color params.
    Neural,
}

impl ColorMode {
    /// Number of color parameters stored on each primitive.
    pub fn feature_dim(self) -> usize {
        match self {
            ColorMode::Sh(deg) => 3 * (deg as usize + 1).pow(2),
            ColorMode::Neural => 0,
        }
    }
}

impl std::fmt::Display for ColorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColorMode::Sh(d) => write!(f, "sh:{d}"),
            ColorMode::Neural => write!(f, "neural"),
        }
    }
}

impl std::str::FromStr for ColorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "neural" {
            return Ok(ColorMode::Neural);
        }
        if let Some(deg) = s.strip_prefix("sh:") {
            let d: u8 = deg
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad SH degree in {s:?}")))?;
            if d > 3 {
                return Err(Error::InvalidConfig(format!("SH degree {d} exceeds 3")));
            }
            return Ok(ColorMode::Sh(d));
        }
        Err(Error::InvalidConfig(format!(
            "unknown color mode {s:?} (expected sh:<deg> or neural)"
        )))
    }
}

impl TryFrom<String> for ColorMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ColorMode> for String {
    fn from(m: ColorMode) -> String {
        m.to_string()
    }
}

/// A single anisotropic Gaussian in its unconstrained parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub center: Vector3<f64>,
    /// Activated scale is `exp(log_scale)`.
    pub log_scale: Vector3<f64>,
    /// Quaternion `(w, x, y, z)`; renormalized before use.
    pub rotation: Vector4<f64>,
    /// Activated opacity is `sigmoid(opacity_logit)`.
    pub opacity_logit: f64,
    pub color: Vec<f64>,
}

impl GaussianPrimitive {
    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color.iter().all(|v| v.is_finite())
    }
}

/// Per-group gradient masks. `true` means the group is frozen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    pub center: bool,
    pub scale: bool,
    pub rotation: bool,
    pub opacity: bool,
    pub color: bool,
}

impl FreezeMask {
    pub const NONE: FreezeMask = FreezeMask {
        center: false,
        scale: false,
        rotation: false,
        opacity: false,
        color: false,
    };

    /// Hard-depth regularization: only the centers move.
    pub const HARD_DEPTH: FreezeMask = FreezeMask {
        center: false,
        scale: true,
        rotation: true,
        opacity: true,
        color: true,
    };

    /// Soft-depth regularization: only the opacities move.
    pub const SOFT_DEPTH: FreezeMask = FreezeMask {
        center: true,
        scale: true,
        rotation: true,
        opacity: false,
        color: true,
    };
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn unit() -> Self {
        Self::new(Vector3::zeros(), Vector3::repeat(1.0))
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vector3<f64>>) -> Option<Self> {
        let mut it = points.into_iter();
        let first = *it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
        Some(Self { min, max })
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().norm()
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn is_degenerate(&self) -> bool {
        self.extent().iter().any(|&e| !(e > 0.0))
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Grows every side by `fraction` of the extent.
    pub fn padded(&self, fraction: f64) -> Self {
        let pad = self.extent() * fraction;
        Self::new(self.min - pad, self.max + pad)
    }

    pub fn union(&self, other: &Aabb) -> Self {
        Self::new(self.min.inf(&other.min), self.max.sup(&other.max))
    }
}

/// The optimizable set of primitives.
///
/// Every mutable access bumps `version`, which downstream caches key on.
#[derive(Debug, Clone)]
pub struct GaussianField {
    primitives: Vec<GaussianPrimitive>,
    color_mode: ColorMode,
    version: u64,
}

// `version` is a cache key, not content.
impl PartialEq for GaussianField {
    fn eq(&self, other: &Self) -> bool {
        self.color_mode == other.color_mode && self.primitives == other.primitives
    }
}

impl GaussianField {
    pub fn new(color_mode: ColorMode) -> Self {
        Self {
            primitives: Vec::new(),
            color_mode,
            version: 0,
        }
    }

    pub fn from_primitives(color_mode: ColorMode, primitives: Vec<GaussianPrimitive>) -> Result<Self> {
        let k = color_mode.feature_dim();
        if let Some(bad) = primitives.iter().find(|p| p.color.len() != k) {
            return Err(Error::dims(format!("{k} color params"), bad.color.len()));
        }
        Ok(Self {
            primitives,
            color_mode,
            version: 0,
        })
    }

    pub fn color_mode(&self) -> ColorMode {
        self.color_mode
    }

    pub fn feature_dim(&self) -> usize {
        self.color_mode.feature_dim()
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn primitives(&self) -> &[GaussianPrimitive] {
        &self.primitives
    }

    pub fn primitives_mut(&mut self) -> &mut Vec<GaussianPrimitive> {
        self.version += 1;
        &mut self.primitives
    }

    pub fn push(&mut self, prim: GaussianPrimitive) -> Result<()> {
        if prim.color.len() != self.feature_dim() {
            return Err(Error::dims(self.feature_dim(), prim.color.len()));
        }
        self.version += 1;
        self.primitives.push(prim);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.primitives.iter().all(GaussianPrimitive::is_finite)
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(self.primitives.iter().map(|p| &p.center))
    }
}

pub const INIT_OPACITY: f64 = 0.1;

/// Uniform random initialization inside `aabb`.
///
/// Scales are isotropic at `diagonal / n^(1/3)`, opacity starts at 0.1 and
/// color parameters at zero (mid-gray for SH).
pub fn init_random(n: usize, aabb: &Aabb, color_mode: ColorMode, seed: u64) -> Result<GaussianField> {
    if n == 0 {
        return Err(Error::EmptyField);
    }
    if aabb.is_degenerate() {
        return Err(Error::InvalidConfig("initialization box is degenerate".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = aabb.diagonal() / (n as f64).cbrt();
    let log_scale = Vector3::repeat(scale.ln());
    let k = color_mode.feature_dim();
    let primitives = (0..n)
        .map(|_| {
            let u = Vector3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            GaussianPrimitive {
                center: aabb.min + aabb.extent().component_mul(&u),
                log_scale,
                rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
                opacity_logit: logit(INIT_OPACITY),
                color: vec![0.0; k],
            }
        })
        .collect();
    GaussianField::from_primitives(color_mode, primitives)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let a = init_random(100, &Aabb::unit(), ColorMode::Sh(3), 7).unwrap();
        let b = init_random(100, &Aabb::unit(), ColorMode::Sh(3), 7).unwrap();
        assert_eq!(a, b);
        let c = init_random(100, &Aabb::unit(), ColorMode::Sh(3), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_centers_inside_box() {
        let bx = Aabb::new(Vector3::new(-1.0, 2.0, 3.0), Vector3::new(1.0, 2.5, 7.0));
        let f = init_random(500, &bx, ColorMode::Sh(0), 1).unwrap();
        assert!(f.primitives().iter().all(|p| bx.contains(&p.center)));
        assert!(f.primitives().iter().all(|p| (p.opacity() - 0.1).abs() < 1e-12));
    }

    #[test]
    fn init_mean_close_to_box_center() {
        let f = init_random(1000, &Aabb::unit(), ColorMode::Sh(0), 3).unwrap();
        let mean = f
            .primitives()
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.center)
            / 1000.0;
        for k in 0..3 {
            assert!((mean[k] - 0.5).abs() < 0.05 * 0.5, "axis {k}: {}", mean[k]);
        }
    }

    #[test]
    fn init_rejects_empty() {
        assert!(matches!(
            init_random(0, &Aabb::unit(), ColorMode::Sh(0), 0),
            Err(Error::EmptyField)
        ));
    }

    #[test]
    fn color_mode_parses() {
        assert_eq!("sh:2".parse::<ColorMode>().unwrap(), ColorMode::Sh(2));
        assert_eq!("neural".parse::<ColorMode>().unwrap(), ColorMode::Neural);
        assert!("sh:9".parse::<ColorMode>().is_err());
        assert_eq!(ColorMode::Sh(3).feature_dim(), 48);
    }

    #[test]
    fn mutation_bumps_version() {
        let mut f = init_random(3, &Aabb::unit(), ColorMode::Sh(0), 0).unwrap();
        let v = f.version();
        f.primitives_mut()[0].center.x += 1.0;
        assert!(f.version() > v);
    }
}
