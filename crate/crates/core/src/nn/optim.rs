use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global gradient-norm clip; off when `None`.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8, clip_norm: None }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || store.iter().map(|(_, t)| Tensor::zeros(t.shape().to_vec())).collect::<Vec<_>>();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn apply(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Internal(format!("{} gradients for {} parameters", grads.len(), store.len())));
        }
        let mut scale = 1.0;
        if let Some(max_norm) = self.config.clip_norm {
            let norm = grads.iter().flat_map(|g| g.data()).map(|v| v.f64() * v.f64()).sum::<f64>().sqrt();
            if norm > max_norm {
                scale = max_norm / (norm + 1e-12);
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (T::of(beta1), T::of(beta2));
        let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
        let step_size = T::of(lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let (eps, scale) = (T::of(eps), T::of(scale));
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let param = store.get_mut(id);
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((p, &g), m), v) in param.data_mut().iter_mut().zip(grads[i].data()).zip(m).zip(v) {
                let g = g * scale;
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_vec([3], vec![1.0, -2.0, 0.5]));
        let mut adam = Adam::new(AdamConfig::default(), &store);
        adam.apply(&mut store, &[Tensor::from_vec([3], vec![0.3, -5.0, 1e-3])]).unwrap();
        // bias-corrected first step is lr * sign(g) up to eps
        let got = store.get(id).data().to_vec();
        for (a, b) in got.iter().zip([1.0 - 2e-4, -2.0 + 2e-4, 0.5 - 2e-4]) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", Tensor::from_vec([2], vec![3.0, -4.0]));
        let mut adam = Adam::new(AdamConfig { lr: 0.05, beta1: 0.9, ..Default::default() }, &store);
        for _ in 0..2000 {
            let g = store.get(id).scale(2.0);
            adam.apply(&mut store, &[g]).unwrap();
        }
        assert!(store.get(id).max_abs() < 1e-2);
    }

    #[test]
    fn clipping_bounds_the_update_direction() {
        let mut store = ParamStore::<f64>::new();
        store.add("w", Tensor::zeros([2]));
        let mut adam = Adam::new(AdamConfig { clip_norm: Some(1.0), ..Default::default() }, &store);
        adam.apply(&mut store, &[Tensor::from_vec([2], vec![300.0, 400.0])]).unwrap();
        assert!(store.get(super::super::ParamId(0)).all_finite());
    }
}
