//! Naïve per-pixel compositor used as ground truth for [`super::Frame`].
//!
//! Projects every primitive from scratch for the queried pixel, sorts by
//! `(view_z, index)` and sums the textbook series. No tiles, no shared
//! per-frame state.

use nalgebra::{Vector2, Vector3};

use super::{RenderKind, ALPHA_MAX, ALPHA_SKIP, T_MIN};
use crate::camera::Camera;
use crate::error::Result;
use crate::field::GaussianField;
use crate::projection::{gaussian_weight, project};

/// Which truncation rules the reference applies. Clamping is always kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceRules {
    /// Same skip threshold and early termination as the rasterizer.
    Matched,
    /// Full series: no skip, no termination.
    Untruncated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceValue {
    pub rgb: Vector3<f64>,
    pub depth: f64,
    pub accum_alpha: f64,
}

/// Composites a single pixel (given by its center coordinates).
pub fn composite_reference(
    field: &GaussianField,
    cam: &Camera,
    kind: RenderKind,
    colors: Option<&[Vector3<f64>]>,
    background: Vector3<f64>,
    pixel: Vector2<f64>,
    rules: ReferenceRules,
) -> Result<ReferenceValue> {
    let mut hits = Vec::new();
    for (i, prim) in field.primitives().iter().enumerate() {
        if let Some(p) = project(prim, cam)? {
            let g = gaussian_weight(&p, &pixel);
            if g > 0.0 {
                hits.push((p.view_z, i, g, p.dist, prim.opacity()));
            }
        }
    }
    hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let truncate = rules == ReferenceRules::Matched;
    let mut rgb = Vector3::zeros();
    let mut depth = 0.0;
    let mut accum = 0.0;
    let mut trans = 1.0;

    if let RenderKind::HardDepth(tau) = kind {
        let mut rank = 0i32;
        for &(_, _, g, dist, _) in &hits {
            if truncate && tau * g < ALPHA_SKIP {
                continue;
            }
            let atten = (1.0 - tau).powi(rank);
            if truncate && atten * (1.0 - tau) < T_MIN {
                break;
            }
            let w = tau * atten * g;
            depth += w * dist;
            accum += w;
            rank += 1;
        }
        return Ok(ReferenceValue {
            rgb,
            depth,
            accum_alpha: accum.clamp(0.0, 1.0),
        });
    }

    for &(_, i, g, dist, opacity) in &hits {
        let alpha = (opacity * g).min(ALPHA_MAX);
        if truncate && alpha < ALPHA_SKIP {
            continue;
        }
        let next = trans * (1.0 - alpha);
        if truncate && next < T_MIN {
            break;
        }
        let w = alpha * trans;
        if let Some(colors) = colors {
            rgb += colors[i] * w;
        }
        depth += dist * w;
        accum += w;
        trans = next;
    }
    if kind == RenderKind::Color {
        rgb = (rgb + background * trans).map(|v| v.clamp(0.0, 1.0));
    }
    Ok(ReferenceValue {
        rgb,
        depth,
        accum_alpha: accum.clamp(0.0, 1.0),
    })
}
