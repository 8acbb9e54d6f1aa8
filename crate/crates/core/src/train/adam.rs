//! Adam with per-group learning rates.

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-15;

/// First and second moments for one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One bias-corrected step at global step `t` (1-based).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, t: u64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        let bc1 = 1.0 - BETA1.powi(t as i32);
        let bc2 = 1.0 - BETA2.powi(t as i32);
        let step = lr / bc1;
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= step * *m / ((*v / bc2).sqrt() + EPS);
        }
    }

    /// Rebuilds per-primitive moments of width `stride` after the field
    /// changed: `origin[i]` is the old index of new primitive `i`, or `None`
    /// for a primitive that starts fresh.
    pub fn remap(&self, origin: &[Option<usize>], stride: usize) -> Self {
        let mut out = Self::zeros(origin.len() * stride);
        for (i, o) in origin.iter().enumerate() {
            if let Some(j) = o {
                out.m[i * stride..(i + 1) * stride].copy_from_slice(&self.m[j * stride..(j + 1) * stride]);
                out.v[i * stride..(i + 1) * stride].copy_from_slice(&self.v[j * stride..(j + 1) * stride]);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut m = Moments::zeros(2);
        let mut p = [1.0, -1.0];
        m.step(&mut p, &[3.0, -0.5], 0.1, 1);
        assert!((p[0] - 0.9).abs() < 1e-12);
        assert!((p[1] + 0.9).abs() < 1e-12);
    }

    #[test]
    fn remap_keeps_survivors() {
        let mut m = Moments::zeros(6);
        m.m = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let r = m.remap(&[Some(2), None, Some(0)], 2);
        assert_eq!(r.m, vec![5.0, 6.0, 0.0, 0.0, 1.0, 2.0]);
    }
}
