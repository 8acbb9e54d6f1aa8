//! Multi-resolution hash-grid position encoding.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::field::Aabb;

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashGridConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub max_resolution: usize,
    pub log2_table_size: u32,
    pub features_per_entry: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 16,
            base_resolution: 16,
            max_resolution: 512,
            log2_table_size: 19,
            features_per_entry: 2,
        }
    }
}

impl HashGridConfig {
    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_entry
    }

    /// Per-level grid resolutions, geometric from base to max.
    pub fn resolutions(&self) -> Vec<usize> {
        if self.levels == 1 {
            return vec![self.base_resolution];
        }
        let growth = ((self.max_resolution as f64).ln() - (self.base_resolution as f64).ln()) / (self.levels - 1) as f64;
        (0..self.levels)
            .map(|l| (self.base_resolution as f64 * (growth * l as f64).exp() + 1e-6).floor() as usize)
            .collect()
    }
}

/// Corner lookups recorded for one encoding, used by the backward pass.
#[derive(Debug, Clone)]
pub struct EncodeTape {
    /// Per level, eight `(table offset, trilinear weight)` pairs.
    pub corners: Vec<[(usize, f64); 8]>,
    /// Per level, the fractional cell position.
    pub frac: Vec<Vector3<f64>>,
    /// Which axes of the normalized position were inside `[0, 1]`.
    pub inside: [bool; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct HashGridEncoder {
    pub config: HashGridConfig,
    pub bounds: Aabb,
    resolutions: Vec<usize>,
    /// `levels × table_size × features` entries.
    pub tables: Vec<f64>,
}

impl HashGridEncoder {
    pub fn new(config: HashGridConfig, bounds: Aabb, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.levels * (1usize << config.log2_table_size) * config.features_per_entry;
        let tables = (0..n).map(|_| rng.random_range(-1e-4..1e-4)).collect();
        Self {
            resolutions: config.resolutions(),
            config,
            bounds,
            tables,
        }
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn table_size(&self) -> usize {
        1 << self.config.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn slot(&self, level: usize, c: [u64; 3]) -> usize {
        let h = (c[0].wrapping_mul(PRIMES[0])) ^ (c[1].wrapping_mul(PRIMES[1])) ^ (c[2].wrapping_mul(PRIMES[2]));
        let t = self.table_size();
        (level * t + (h as usize & (t - 1))) * self.config.features_per_entry
    }

    /// Table offset of a lattice corner at a level.
    pub fn corner_offset(&self, level: usize, corner: [u64; 3]) -> usize {
        self.slot(level, corner)
    }

    /// Normalized position in the unit cube, clamped.
    fn normalize(&self, pos: &Vector3<f64>) -> (Vector3<f64>, [bool; 3]) {
        let ext = self.bounds.extent();
        let mut u = Vector3::zeros();
        let mut inside = [true; 3];
        for k in 0..3 {
            let v = (pos[k] - self.bounds.min[k]) / ext[k];
            inside[k] = (0.0..=1.0).contains(&v);
            u[k] = v.clamp(0.0, 1.0);
        }
        (u, inside)
    }

    pub fn encode(&self, pos: &Vector3<f64>) -> Vec<f64> {
        self.encode_with_tape(pos).0
    }

    pub fn encode_with_tape(&self, pos: &Vector3<f64>) -> (Vec<f64>, EncodeTape) {
        let f = self.config.features_per_entry;
        let (u, inside) = self.normalize(pos);
        let mut out = vec![0.0; self.output_dim()];
        let mut corners = Vec::with_capacity(self.config.levels);
        let mut fracs = Vec::with_capacity(self.config.levels);
        for (level, &res) in self.resolutions.iter().enumerate() {
            let scaled = u * res as f64;
            let base = scaled.map(f64::floor);
            let frac = scaled - base;
            let mut level_corners = [(0usize, 0.0f64); 8];
            for (ci, lc) in level_corners.iter_mut().enumerate() {
                let mut w = 1.0;
                let mut c = [0u64; 3];
                for k in 0..3 {
                    let bit = (ci >> k) & 1;
                    c[k] = base[k] as u64 + bit as u64;
                    w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                }
                let off = self.slot(level, c);
                for j in 0..f {
                    out[level * f + j] += w * self.tables[off + j];
                }
                *lc = (off, w);
            }
            corners.push(level_corners);
            fracs.push(frac);
        }
        (
            out,
            EncodeTape {
                corners,
                frac: fracs,
                inside,
            },
        )
    }

    /// Scatters `d_out` into `d_tables` and returns `dL/dpos`.
    pub fn encode_vjp(&self, tape: &EncodeTape, d_out: &[f64], d_tables: Option<&mut [f64]>) -> Vector3<f64> {
        let f = self.config.features_per_entry;
        if let Some(dt) = d_tables {
            for (level, lc) in tape.corners.iter().enumerate() {
                for &(off, w) in lc {
                    for j in 0..f {
                        dt[off + j] += w * d_out[level * f + j];
                    }
                }
            }
        }
        let ext = self.bounds.extent();
        let mut d_pos = Vector3::zeros();
        for (level, lc) in tape.corners.iter().enumerate() {
            let res = self.resolutions[level] as f64;
            let frac = tape.frac[level];
            for (ci, &(off, _)) in lc.iter().enumerate() {
                let s: f64 = (0..f).map(|j| self.tables[off + j] * d_out[level * f + j]).sum();
                if s == 0.0 {
                    continue;
                }
                for k in 0..3 {
                    // ∂w/∂frac_k: replace factor k by ±1.
                    let mut dw = 1.0;
                    for m in 0..3 {
                        let bit = (ci >> m) & 1;
                        dw *= if m == k {
                            if bit == 1 {
                                1.0
                            } else {
                                -1.0
                            }
                        } else if bit == 1 {
                            frac[m]
                        } else {
                            1.0 - frac[m]
                        };
                    }
                    d_pos[k] += s * dw * res / ext[k];
                }
            }
        }
        for k in 0..3 {
            if !tape.inside[k] {
                d_pos[k] = 0.0;
            }
        }
        d_pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> HashGridEncoder {
        let cfg = HashGridConfig {
            log2_table_size: 12,
            ..Default::default()
        };
        HashGridEncoder::new(cfg, Aabb::unit(), 3)
    }

    #[test]
    fn resolutions_increase_geometrically() {
        let r = HashGridConfig::default().resolutions();
        assert_eq!(r.len(), 16);
        assert_eq!(r[0], 16);
        assert_eq!(r[15], 512);
        assert!(r.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn corner_position_reads_corner_features() {
        let enc = small();
        let out = enc.encode(&Vector3::zeros());
        for level in 0..16 {
            let off = enc.corner_offset(level, [0, 0, 0]);
            assert_eq!(out[level * 2], enc.tables[off]);
            assert_eq!(out[level * 2 + 1], enc.tables[off + 1]);
        }
        // A corner of level 0 only.
        let p = Vector3::new(3.0 / 16.0, 5.0 / 16.0, 7.0 / 16.0);
        let out = enc.encode(&p);
        let off = enc.corner_offset(0, [3, 5, 7]);
        assert!((out[0] - enc.tables[off]).abs() < 1e-18);
    }

    #[test]
    fn zero_tables_give_zero() {
        let mut enc = small();
        enc.tables.iter_mut().for_each(|v| *v = 0.0);
        assert!(enc.encode(&Vector3::new(0.3, 0.6, 0.2)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn position_gradient_matches_finite_difference() {
        let mut enc = small();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        enc.tables.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let pos = Vector3::new(0.3137, 0.6021, 0.2279);
        let d_out: Vec<f64> = (0..32).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
        let (_, tape) = enc.encode_with_tape(&pos);
        let g = enc.encode_vjp(&tape, &d_out, None);
        let h = 1e-7;
        for k in 0..3 {
            let mut p = pos;
            let mut m = pos;
            p[k] += h;
            m[k] -= h;
            let fp: f64 = enc.encode(&p).iter().zip(&d_out).map(|(a, b)| a * b).sum();
            let fm: f64 = enc.encode(&m).iter().zip(&d_out).map(|(a, b)| a * b).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "axis {k}: fd {fd} vs {}", g[k]);
        }
    }
}
