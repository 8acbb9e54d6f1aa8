//! Local and global depth normalization and the tolerant L2 depth loss.
//!
//! Local: `(d − mean(𝒫)) / (std(𝒫) + ε)`. Global: `(d − mean(𝒫)) /
//! (std(image) + ε)`. Standard deviations are population (1/N).

use super::patch::PatchGrid;
use super::LossWeights;
use crate::error::{Error, Result};
use crate::raster::DepthMap;

pub const EPS_STD_FACTOR: f64 = 1e-2;
pub const EPS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormMode {
    Local,
    Global,
}

/// How the denominator guard is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Fixed(f64),
    /// `max(1e-2 · std(image), 1e-8)`, differentiated through.
    ImageStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDepth {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub mode: NormMode,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (mut n, mut sum) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        sum += v;
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Default guard for a map: `max(1e-2 · std, 1e-8)`.
pub fn image_epsilon(d: &[f64]) -> f64 {
    scaled_epsilon(mean_std(d.iter().copied()).1)
}

fn scaled_epsilon(std: f64) -> f64 {
    (EPS_STD_FACTOR * std).max(EPS_FLOOR)
}

struct Stats {
    global_mean: f64,
    global_std: f64,
    /// Per patch: (mean, std, denominator).
    patches: Vec<(f64, f64, f64)>,
}

fn stats(d: &DepthMap, grid: &PatchGrid, mode: NormMode, eps: Epsilon) -> Result<Stats> {
    grid.check(d.width, d.height)?;
    let (global_mean, global_std) = mean_std(d.depth.iter().copied());
    let eps = match eps {
        Epsilon::Fixed(e) => e,
        Epsilon::ImageStd => scaled_epsilon(global_std),
    };
    let patches = grid
        .patches
        .iter()
        .map(|p| {
            let (m, s) = mean_std(p.indices(d.width).map(|i| d.depth[i]));
            let denom = match mode {
                NormMode::Local => s + eps,
                NormMode::Global => global_std + eps,
            };
            (m, s, denom)
        })
        .collect();
    Ok(Stats {
        global_mean,
        global_std,
        patches,
    })
}

pub fn normalize(d: &DepthMap, grid: &PatchGrid, mode: NormMode, eps: Epsilon) -> Result<NormalizedDepth> {
    let st = stats(d, grid, mode, eps)?;
    let mut values = vec![0.0; d.len()];
    for (p, &(m, _, denom)) in grid.patches.iter().zip(&st.patches) {
        for i in p.indices(d.width) {
            values[i] = (d.depth[i] - m) / denom;
        }
    }
    Ok(NormalizedDepth {
        width: d.width,
        height: d.height,
        values,
        mode,
    })
}

/// Gradient of `⟨upstream, normalize(d)⟩` with respect to `d`, including
/// the paths through patch means, standard deviations and ε.
pub fn normalize_vjp(d: &DepthMap, grid: &PatchGrid, mode: NormMode, eps: Epsilon, upstream: &[f64]) -> Result<Vec<f64>> {
    if upstream.len() != d.len() {
        return Err(Error::dims(d.len(), upstream.len()));
    }
    let st = stats(d, grid, mode, eps)?;
    let n = d.len() as f64;
    let eps_coeff = if eps == Epsilon::ImageStd && EPS_STD_FACTOR * st.global_std > EPS_FLOOR {
        EPS_STD_FACTOR
    } else {
        0.0
    };
    let global_coeff = match mode {
        NormMode::Local => eps_coeff,
        NormMode::Global => 1.0 + eps_coeff,
    };
    let mut out = vec![0.0; d.len()];
    let mut a_total = 0.0;
    for (p, &(m, s, denom)) in grid.patches.iter().zip(&st.patches) {
        let len = p.len() as f64;
        let g_mean = p.indices(d.width).map(|i| upstream[i]).sum::<f64>() / len;
        // −∂L/∂denom
        let a: f64 = p.indices(d.width).map(|i| upstream[i] * (d.depth[i] - m)).sum::<f64>() / (denom * denom);
        a_total += a;
        for i in p.indices(d.width) {
            out[i] = (upstream[i] - g_mean) / denom;
            if mode == NormMode::Local && s > 0.0 {
                out[i] -= a * (d.depth[i] - m) / (len * s);
            }
        }
    }
    if st.global_std > 0.0 && global_coeff != 0.0 {
        let k = a_total * global_coeff / (n * st.global_std);
        for (o, v) in out.iter_mut().zip(&d.depth) {
            *o -= k * (v - st.global_mean);
        }
    }
    Ok(out)
}

/// Local normalization with an explicit ε.
pub fn normalize_local(d: &DepthMap, grid: &PatchGrid, eps: f64) -> Result<NormalizedDepth> {
    normalize(d, grid, NormMode::Local, Epsilon::Fixed(eps))
}

/// Global normalization with the image-derived ε.
pub fn normalize_global(d: &DepthMap, grid: &PatchGrid) -> Result<NormalizedDepth> {
    normalize(d, grid, NormMode::Global, Epsilon::ImageStd)
}

fn check_pair(a: &NormalizedDepth, b: &NormalizedDepth) -> Result<()> {
    if a.mode != b.mode {
        return Err(Error::ModeMismatch);
    }
    if a.values.len() != b.values.len() || a.width != b.width {
        return Err(Error::dims(a.values.len(), b.values.len()));
    }
    Ok(())
}

/// Mean of `max(|a − b| − δ, 0)²`.
pub fn tolerant_l2(a: &NormalizedDepth, b: &NormalizedDepth, delta: f64) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.values.len().max(1) as f64;
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| {
            let e = ((x - y).abs() - delta).max(0.0);
            e * e
        })
        .sum::<f64>()
        / n)
}

/// [`tolerant_l2`] and its gradient with respect to `a`.
pub fn tolerant_l2_grad(a: &NormalizedDepth, b: &NormalizedDepth, delta: f64) -> Result<(f64, Vec<f64>)> {
    check_pair(a, b)?;
    let n = a.values.len().max(1) as f64;
    let mut value = 0.0;
    let grad = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| {
            let r = x - y;
            let e = (r.abs() - delta).max(0.0);
            value += e * e;
            2.0 * e * r.signum() / n
        })
        .collect();
    Ok((value / n, grad))
}

fn check_maps(a: &DepthMap, b: &DepthMap) -> Result<()> {
    a.same_dims(b)
}

/// `tl2(GN(d), GN(mono)) + γ·tl2(LN(d), LN(mono))`, each map normalized
/// with its own statistics.
pub fn depth_regularization(rendered: &DepthMap, mono: &DepthMap, grid: &PatchGrid, w: &LossWeights) -> Result<f64> {
    Ok(depth_regularization_grad(rendered, mono, grid, w)?.0)
}

/// [`depth_regularization`] and its gradient with respect to `rendered`;
/// `mono` is a constant.
pub fn depth_regularization_grad(
    rendered: &DepthMap,
    mono: &DepthMap,
    grid: &PatchGrid,
    w: &LossWeights,
) -> Result<(f64, Vec<f64>)> {
    depth_regularization_weighted(rendered, mono, grid, 1.0, w.gamma, w.delta)
}

/// `global_weight·tl2(GN) + local_weight·tl2(LN)` and its gradient.
pub fn depth_regularization_weighted(
    rendered: &DepthMap,
    mono: &DepthMap,
    grid: &PatchGrid,
    global_weight: f64,
    local_weight: f64,
    delta: f64,
) -> Result<(f64, Vec<f64>)> {
    check_maps(rendered, mono)?;
    let mut value = 0.0;
    let mut grad = vec![0.0; rendered.len()];
    for (mode, weight) in [(NormMode::Global, global_weight), (NormMode::Local, local_weight)] {
        if weight == 0.0 {
            continue;
        }
        let a = normalize(rendered, grid, mode, Epsilon::ImageStd)?;
        let b = normalize(mono, grid, mode, Epsilon::ImageStd)?;
        let (v, g) = tolerant_l2_grad(&a, &b, delta)?;
        value += weight * v;
        let up: Vec<f64> = g.iter().map(|x| x * weight).collect();
        for (o, d) in grad.iter_mut().zip(normalize_vjp(rendered, grid, mode, Epsilon::ImageStd, &up)?) {
            *o += d;
        }
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::super::patch::partition;
    use super::*;
    use approx::assert_abs_diff_eq;

    fn map(w: usize, h: usize, v: Vec<f64>) -> DepthMap {
        DepthMap::from_depth(w, h, v).unwrap()
    }

    #[test]
    fn local_example() {
        let d = map(3, 1, vec![1.0, 2.0, 3.0]);
        let g = partition(3, 1, 3).unwrap();
        let n = normalize_local(&d, &g, 0.0).unwrap();
        let k = 1.0 / (2.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(n.values[0], -k, epsilon = 1e-12);
        assert_abs_diff_eq!(n.values[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.values[2], k, epsilon = 1e-12);
        assert_abs_diff_eq!(k, 1.2247, epsilon = 1e-4);
    }

    #[test]
    fn constant_patch_is_zero() {
        let d = map(2, 2, vec![5.0; 4]);
        let g = partition(2, 2, 2).unwrap();
        assert!(normalize_local(&d, &g, 1e-8).unwrap().values.iter().all(|&v| v == 0.0));
        assert!(normalize_global(&d, &g).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn global_example() {
        let d = map(4, 1, vec![1.0, 2.0, 3.0, 5.0]);
        let g = partition(4, 1, 2).unwrap();
        let n = normalize_global(&d, &g).unwrap();
        let mean = 11.0 / 4.0;
        let std = ([1.0f64, 2.0, 3.0, 5.0].iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0).sqrt();
        assert_abs_diff_eq!(std, 1.479, epsilon = 1e-3);
        let denom = std + 1e-2 * std;
        let want = [-0.5 / denom, 0.5 / denom, -1.0 / denom, 1.0 / denom];
        for (a, b) in n.values.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn tolerant_l2_examples() {
        let mk = |v: Vec<f64>| NormalizedDepth {
            width: v.len(),
            height: 1,
            values: v,
            mode: NormMode::Local,
        };
        let a = mk(vec![0.0; 10]);
        let mut bv = vec![0.0; 10];
        bv[3] = 0.5;
        assert_abs_diff_eq!(tolerant_l2(&a, &mk(bv), 0.1).unwrap(), 0.16 / 10.0, epsilon = 1e-15);
        assert_eq!(tolerant_l2(&a, &mk(vec![0.05; 10]), 0.1).unwrap(), 0.0);
        let mut g = mk(vec![0.0; 10]);
        g.mode = NormMode::Global;
        assert!(matches!(tolerant_l2(&a, &g, 0.1), Err(Error::ModeMismatch)));
    }

    #[test]
    fn regularization_zero_for_affine_mono() {
        let (w, h) = (12, 9);
        let v: Vec<f64> = (0..w * h).map(|i| 2.0 + (i as f64 * 0.37).sin() + 0.01 * i as f64).collect();
        let r = map(w, h, v.clone());
        let m = map(w, h, v.iter().map(|x| 3.5 * x - 1.0).collect());
        let g = partition(w, h, 4).unwrap();
        let lw = LossWeights {
            delta: 0.0,
            ..Default::default()
        };
        assert!(depth_regularization(&r, &m, &g, &lw).unwrap() < 1e-8);
        assert_eq!(depth_regularization(&r, &r, &g, &lw).unwrap(), 0.0);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let (w, h) = (7, 5);
        let v: Vec<f64> = (0..w * h).map(|i| 1.0 + (i as f64 * 0.71).cos()).collect();
        let up: Vec<f64> = (0..w * h).map(|i| (i as f64 * 1.3).sin()).collect();
        let g = partition(w, h, 3).unwrap();
        for mode in [NormMode::Local, NormMode::Global] {
            for eps in [Epsilon::Fixed(0.05), Epsilon::ImageStd] {
                let d = map(w, h, v.clone());
                let an = normalize_vjp(&d, &g, mode, eps, &up).unwrap();
                let f = |vals: &[f64]| {
                    let n = normalize(&map(w, h, vals.to_vec()), &g, mode, eps).unwrap();
                    n.values.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
                };
                for j in 0..w * h {
                    let mut p = v.clone();
                    p[j] += 1e-6;
                    let mut m = v.clone();
                    m[j] -= 1e-6;
                    let fd = (f(&p) - f(&m)) / 2e-6;
                    assert!((fd - an[j]).abs() < 1e-7 + 1e-5 * fd.abs(), "{mode:?} {eps:?} {j}: {fd} vs {}", an[j]);
                }
            }
        }
    }
}
