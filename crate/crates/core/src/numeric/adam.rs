use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for one [`ParamStore`]; moments are allocated on the first step.
#[derive(Clone, Debug)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    t: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update over every parameter, then zero the grads.
    pub fn step(&mut self, params: &mut ParamStore<T>) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|(_, p)| vec![T::zero(); p.value.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c = self.config;
        let b1 = T::of(c.beta1);
        let b2 = T::of(c.beta2);
        let one = T::one();
        let correct1 = T::of(1.0 - c.beta1.powi(self.t as i32));
        let correct2 = T::of(1.0 - c.beta2.powi(self.t as i32));
        let lr = T::of(c.lr);
        let eps = T::of(c.eps);
        for (k, p) in params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let grad = p.grad.data().to_vec();
            for (i, (w, g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
                m[i] = b1 * m[i] + (one - b1) * g;
                v[i] = b2 * v[i] + (one - b2) * g * g;
                let m_hat = m[i] / correct1;
                let v_hat = v[i] / correct2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;

    fn single(value: f64, grad: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.add_filled("w", &[1], value).unwrap();
        s.get_mut(id).grad = Tensor::scalar(grad);
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.5] {
            let mut s = single(1.0, g);
            let mut adam = AdamState::new(AdamConfig::with_lr(1e-3));
            adam.step(&mut s);
            let w = s.by_name("w").unwrap().value.data()[0];
            assert!((w - (1.0 - 1e-3 * g.signum())).abs() < 1e-9);
            assert_eq!(s.by_name("w").unwrap().grad.data()[0], 0.0);
        }
    }

    #[test]
    fn zero_grad_leaves_value_and_counts_step() {
        let mut s = single(2.0, 0.0);
        let mut adam = AdamState::new(AdamConfig::with_lr(0.1));
        adam.step(&mut s);
        assert_eq!(s.by_name("w").unwrap().value.data()[0], 2.0);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn two_steps_match_scalar_recurrence() {
        let (lr, b1, b2, eps) = (0.01f64, 0.9f64, 0.999f64, 1e-8f64);
        let grads = [0.3, -1.2];
        // scalar oracle
        let (mut w, mut m, mut v) = (0.5f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut s = single(0.5, 0.0);
        let id = s.id("w").unwrap();
        let mut adam = AdamState::new(AdamConfig { lr, beta1: b1, beta2: b2, eps });
        for g in grads {
            s.get_mut(id).grad = Tensor::scalar(g);
            adam.step(&mut s);
        }
        assert!((s.value(id).data()[0] - w).abs() < 1e-7);
    }
}
