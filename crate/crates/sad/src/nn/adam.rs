//! Adaptive-moment optimizer with bias correction. Slots are kept in the
//! visit order of the model parameters, which is fixed per configuration, so
//! checkpoint round-trips restore the exact state.

use super::Real;
use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD};

#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<ArrayD<F>>,
    pub v: Vec<ArrayD<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update over `(param, grad)` pairs. The pair order must be
    /// identical across steps; slots are allocated on first use.
    pub fn step(&mut self, lr: f64, mut pairs: Vec<(ArrayViewMutD<F>, ArrayViewD<F>)>) {
        if self.m.is_empty() {
            for (_, g) in &pairs {
                self.m.push(ArrayD::zeros(g.raw_dim()));
                self.v.push(ArrayD::zeros(g.raw_dim()));
            }
        }
        assert_eq!(
            self.m.len(),
            pairs.len(),
            "optimizer slot count changed between steps"
        );
        self.t += 1;
        let b1 = F::from_f64(self.beta1);
        let b2 = F::from_f64(self.beta2);
        let one = F::one();
        let bc1 = F::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = F::from_f64(1.0 - self.beta2.powi(self.t as i32));
        let lr_f = F::from_f64(lr);
        let eps = F::from_f64(self.eps);
        for (i, (p, g)) in pairs.iter_mut().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(&mut *m).and(g.view()).for_each(|m, &g| {
                *m = b1 * *m + (one - b1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g.view()).for_each(|v, &g| {
                *v = b2 * *v + (one - b2) * g * g;
            });
            ndarray::Zip::from(&mut *p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p = *p - lr_f * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

impl<F: Real> Default for Adam<F> {
    fn default() -> Self {
        Self::new()
    }
}

/// Polynomial learning-rate decay `lr0 * (1 - step/total)^power`.
pub fn poly_lr(lr0: f64, step: u64, total: u64, power: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = (step.min(total) as f64) / (total as f64);
    lr0 * (1.0 - frac).max(0.0).powf(power)
}
