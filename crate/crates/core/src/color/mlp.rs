//! Small fully-connected network split into a position stage and a
//! view-dependent stage.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub direction_dim: usize,
    /// Layers before the view direction is merged in.
    pub position_layers: usize,
    /// Layers after the merge, including the RGB output layer.
    pub view_layers: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden: 64,
            direction_dim: 25,
            position_layers: 3,
            view_layers: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Layer {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

impl Layer {
    fn forward(&self, params: &[f64], x: &[f64], y: &mut [f64]) {
        for o in 0..self.outputs {
            let row = &params[self.weights + o * self.inputs..self.weights + (o + 1) * self.inputs];
            y[o] = params[self.bias + o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    fn backward(&self, params: &[f64], x: &[f64], dy: &[f64], d_params: Option<&mut [f64]>) -> Vec<f64> {
        let mut dx = vec![0.0; self.inputs];
        for o in 0..self.outputs {
            let row = &params[self.weights + o * self.inputs..self.weights + (o + 1) * self.inputs];
            for (d, w) in dx.iter_mut().zip(row) {
                *d += dy[o] * w;
            }
        }
        if let Some(dp) = d_params {
            for o in 0..self.outputs {
                if dy[o] == 0.0 {
                    continue;
                }
                dp[self.bias + o] += dy[o];
                let drow = &mut dp[self.weights + o * self.inputs..self.weights + (o + 1) * self.inputs];
                for (d, v) in drow.iter_mut().zip(x) {
                    *d += dy[o] * v;
                }
            }
        }
        dx
    }
}

/// Activations recorded for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    /// Input to each layer of the stage.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation output of each layer.
    pre: Vec<Vec<f64>>,
}

impl MlpTape {
    /// Feeds the sign of every pre-activation into `h`.
    pub fn relu_pattern<H: std::hash::Hasher>(&self, h: &mut H) {
        for layer in &self.pre {
            for &v in layer {
                h.write_u8((v > 0.0) as u8);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorMlp {
    pub config: MlpConfig,
    pub params: Vec<f64>,
    layers: Vec<Layer>,
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl ColorMlp {
    pub fn new(config: MlpConfig, seed: u64) -> Self {
        assert!(config.position_layers >= 1 && config.view_layers >= 1);
        let mut dims = vec![config.input_dim];
        dims.extend(std::iter::repeat_n(config.hidden, config.position_layers));
        let mut layers = Vec::new();
        let mut offset = 0;
        let mut push = |inputs: usize, outputs: usize| {
            layers.push(Layer {
                inputs,
                outputs,
                weights: offset,
                bias: offset + inputs * outputs,
            });
            offset += inputs * outputs + outputs;
        };
        for w in dims.windows(2) {
            push(w[0], w[1]);
        }
        let mut prev = config.hidden + config.direction_dim;
        for _ in 1..config.view_layers {
            push(prev, config.hidden);
            prev = config.hidden;
        }
        push(prev, 3);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; offset];
        for l in &layers {
            let bound = (6.0 / (l.inputs + l.outputs) as f64).sqrt();
            for w in &mut params[l.weights..l.weights + l.inputs * l.outputs] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Self { config, params, layers }
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.config.hidden
    }

    fn run(&self, range: std::ops::Range<usize>, input: Vec<f64>, sigmoid_last: bool) -> (Vec<f64>, MlpTape) {
        let mut tape = MlpTape::default();
        let mut x = input;
        let last = range.end - 1;
        for li in range {
            let l = &self.layers[li];
            let mut y = vec![0.0; l.outputs];
            l.forward(&self.params, &x, &mut y);
            tape.inputs.push(x);
            let act: Vec<f64> = if li == last && sigmoid_last {
                y.iter().map(|&v| sigmoid(v)).collect()
            } else {
                y.iter().map(|&v| relu(v)).collect()
            };
            tape.pre.push(y);
            x = act;
        }
        (x, tape)
    }

    fn run_vjp(
        &self,
        range: std::ops::Range<usize>,
        tape: &MlpTape,
        d_out: &[f64],
        sigmoid_last: bool,
        mut d_params: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let last = range.end - 1;
        let mut g = d_out.to_vec();
        for (ti, li) in range.enumerate().rev() {
            let l = &self.layers[li];
            let pre = &tape.pre[ti];
            let dy: Vec<f64> = if li == last && sigmoid_last {
                pre.iter()
                    .zip(&g)
                    .map(|(&p, &d)| {
                        let s = sigmoid(p);
                        d * s * (1.0 - s)
                    })
                    .collect()
            } else {
                pre.iter().zip(&g).map(|(&p, &d)| if p > 0.0 { d } else { 0.0 }).collect()
            };
            g = l.backward(&self.params, &tape.inputs[ti], &dy, d_params.as_deref_mut());
        }
        g
    }

    /// Position stage: encoding → cacheable feature.
    pub fn position_stage(&self, encoding: &[f64]) -> (Vec<f64>, MlpTape) {
        self.run(0..self.config.position_layers, encoding.to_vec(), false)
    }

    /// View stage: feature ⊕ direction encoding → RGB in (0, 1).
    pub fn view_stage(&self, feature: &[f64], direction: &[f64]) -> ([f64; 3], MlpTape) {
        let mut input = feature.to_vec();
        input.extend_from_slice(direction);
        let (out, tape) = self.run(self.config.position_layers..self.layers.len(), input, true);
        ([out[0], out[1], out[2]], tape)
    }

    /// Returns `(dL/dfeature, dL/ddirection)`.
    pub fn view_stage_vjp(&self, tape: &MlpTape, d_rgb: &[f64; 3], d_params: Option<&mut [f64]>) -> (Vec<f64>, Vec<f64>) {
        let mut g = self.run_vjp(self.config.position_layers..self.layers.len(), tape, d_rgb, true, d_params);
        let d_dir = g.split_off(self.config.hidden);
        (g, d_dir)
    }

    /// Returns `dL/dencoding`.
    pub fn position_stage_vjp(&self, tape: &MlpTape, d_feature: &[f64], d_params: Option<&mut [f64]>) -> Vec<f64> {
        self.run_vjp(0..self.config.position_layers, tape, d_feature, false, d_params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_has_five_layers_and_unit_interval_output() {
        let mlp = ColorMlp::new(MlpConfig::default(), 0);
        assert_eq!(mlp.layer_count(), 5);
        let enc: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
        let (feat, _) = mlp.position_stage(&enc);
        assert_eq!(feat.len(), 64);
        let (rgb, _) = mlp.view_stage(&feat, &[0.1; 25]);
        assert!(rgb.iter().all(|&c| c > 0.0 && c < 1.0));
    }

    #[test]
    fn parameter_gradient_matches_finite_difference() {
        let mut mlp = ColorMlp::new(MlpConfig::default(), 4);
        let enc: Vec<f64> = (0..32).map(|i| (i as f64 * 0.91).cos()).collect();
        let dir: Vec<f64> = (0..25).map(|i| (i as f64 * 0.13).sin()).collect();
        let up = [0.3, -0.7, 0.2];
        let loss = |m: &ColorMlp| {
            let (f, _) = m.position_stage(&enc);
            let (rgb, _) = m.view_stage(&f, &dir);
            rgb.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let (f, ta) = mlp.position_stage(&enc);
        let (_, tb) = mlp.view_stage(&f, &dir);
        let mut dp = vec![0.0; mlp.params.len()];
        let (df, _) = mlp.view_stage_vjp(&tb, &up, Some(&mut dp));
        mlp.position_stage_vjp(&ta, &df, Some(&mut dp));
        let h = 1e-6;
        for i in (0..mlp.params.len()).step_by(97) {
            let orig = mlp.params[i];
            mlp.params[i] = orig + h;
            let fp = loss(&mlp);
            mlp.params[i] = orig - h;
            let fm = loss(&mlp);
            mlp.params[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - dp[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: fd {fd} vs {}", dp[i]);
        }
    }
}
