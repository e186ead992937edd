use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments and a per-tensor learning-rate scale.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    lr_scale: Vec<f64>,
    step: u64,
}

impl Adam {
    /// `lr_scale[i]` multiplies the base rate for tensor `i`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>, lr_scale: Vec<f64>) -> Self {
        let first: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.raw_dim())).collect();
        assert_eq!(first.len(), lr_scale.len(), "one scale per tensor");
        Self {
            config,
            second: first.clone(),
            first,
            lr_scale,
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, i: usize) -> (&Tensor, &Tensor) {
        (&self.first[i], &self.second[i])
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let rate = lr * self.lr_scale[i];
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            ndarray::Zip::from(&mut **p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= rate * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut q = array![[3.0]];
        let mut fresh = Adam::new(AdamConfig::default(), [&q], vec![1.0]);
        fresh.step(&mut [&mut q], &[array![[0.0]]]);
        assert_eq!(q[[0, 0]], 3.0);

        let mut p = array![[1.0, -2.0]];
        let mut adam = Adam::new(AdamConfig::default(), [&p], vec![1.0]);
        adam.step(&mut [&mut p], &[array![[1.0, 1.0]]]);
        let (m, v) = (adam.moments(0).0.clone(), adam.moments(0).1.clone());
        adam.step(&mut [&mut p], &[array![[0.0, 0.0]]]);
        for (now, before) in adam.moments(0).0.iter().zip(m.iter()) {
            assert!((now - 0.9 * before).abs() < 1e-15);
        }
        for (now, before) in adam.moments(0).1.iter().zip(v.iter()) {
            assert!((now - 0.999 * before).abs() < 1e-15);
        }
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamConfig::default();
        let mut p = array![[0.5]];
        let mut adam = Adam::new(cfg, [&p], vec![1.0]);
        adam.step(&mut [&mut p], &[array![[1.0]]]);
        // m_hat = v_hat = 1, so the update is lr / (1 + eps).
        let expected = 0.5 - cfg.lr / (1.0 + cfg.eps);
        assert!((p[[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn learning_rate_scale_is_per_tensor() {
        let mut enc = array![[0.0]];
        let mut head = array![[0.0]];
        let mut adam = Adam::new(AdamConfig::default(), [&enc, &head], vec![0.3, 1.0]);
        adam.step(&mut [&mut enc, &mut head], &[array![[2.0]], array![[2.0]]]);
        assert!((enc[[0, 0]] / head[[0, 0]] - 0.3).abs() < 1e-12);
    }
}
