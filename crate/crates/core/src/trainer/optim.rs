//! First-order update rules over a flat parameter vector.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Plain gradient descent.
    Gd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= lr * mh / (vh.sqrt() + self.eps);
        }
    }

    /// Clears the moments of the parameters in `range`.
    pub fn reset_range(&mut self, range: std::ops::Range<usize>) {
        for k in range {
            self.m[k] = 0.0;
            self.v[k] = 0.0;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Adam(Adam),
    Gd,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Self::Adam(Adam::new(n)),
            OptimizerKind::Gd => Self::Gd,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Self::Adam(a) => a.step(params, grad, lr),
            Self::Gd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
        }
    }

    pub fn reset_range(&mut self, range: std::ops::Range<usize>) {
        if let Self::Adam(a) = self {
            a.reset_range(range);
        }
    }
}

/// `lr * (1 + cos(pi t / T)) / 2`, floored at `floor * lr`.
pub fn cosine_lr(base: f64, step: usize, total: usize, floor: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (step as f64 / total as f64).min(1.0);
    let c = 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
    base * (floor + (1.0 - floor) * c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = Adam::new(3);
        let mut p = vec![1.0, -2.0, 0.5];
        a.step(&mut p, &[0.3, -4.0, 0.0], 0.01);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 1.99).abs() < 1e-9);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut a = Adam::new(2);
        let mut p = vec![3.0, -1.0];
        for _ in 0..5000 {
            let g = vec![2.0 * (p[0] - 1.0), 8.0 * (p[1] + 0.5)];
            a.step(&mut p, &g, 0.01);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
        assert!((p[1] + 0.5).abs() < 1e-3);
    }

    #[test]
    fn gd_step() {
        let mut o = Optimizer::new(OptimizerKind::Gd, 2);
        let mut p = vec![1.0, 1.0];
        o.step(&mut p, &[1.0, -2.0], 0.5);
        assert_eq!(p, vec![0.5, 2.0]);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1e-3, 0, 100, 0.0), 1e-3);
        assert!(cosine_lr(1e-3, 100, 100, 0.0).abs() < 1e-18);
        assert!((cosine_lr(1e-3, 50, 100, 0.0) - 5e-4).abs() < 1e-15);
        assert!((cosine_lr(1e-3, 100, 100, 0.1) - 1e-4).abs() < 1e-15);
    }
}
