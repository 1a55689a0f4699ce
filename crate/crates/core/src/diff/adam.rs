use crate::error::{Error, Result};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Bias-corrected Adam with the usual default moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.rows(), t.cols()))
            .collect();
        Self {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Apply one update to every trainable parameter of `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<()> {
        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let g = grads
                .get(id)
                .ok_or_else(|| Error::MissingGradient(store.name(id).to_string()))?;
            if g.len() != store.get(id).len() {
                return Err(Error::shape(
                    "adam_step",
                    format!(
                        "gradient for `{}` has {} values, parameter has {}",
                        store.name(id),
                        g.len(),
                        store.get(id).len()
                    ),
                ));
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for id in store.ids() {
            if !store.is_trainable(id) {
                continue;
            }
            let Some(g) = grads.get(id) else { continue };
            let m = self.first[id.0].data_mut();
            let v = self.second[id.0].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= self.lr * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x), true);
        s
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut store = scalar_store(1.25);
        let mut adam = AdamState::new(&store, 0.1);
        let grads = Gradients::zeros_like(&store);
        for _ in 0..5 {
            adam.step(&mut store, &grads).unwrap();
        }
        assert_eq!(store.by_name("x").unwrap().item(), 1.25);
        assert_eq!(adam.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [3.0, -0.02] {
            let mut store = scalar_store(0.0);
            let mut adam = AdamState::new(&store, 0.01);
            let mut grads = Gradients::zeros_like(&store);
            grads.set(store.id("x").unwrap(), Tensor::scalar(g));
            adam.step(&mut store, &grads).unwrap();
            let x = store.by_name("x").unwrap().item();
            assert!((x + 0.01 * f64::signum(g)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn minimizes_a_parabola() {
        let mut store = scalar_store(1.0);
        let id = store.id("x").unwrap();
        let mut adam = AdamState::new(&store, 0.1);
        for _ in 0..100 {
            let x = store.get(id).item();
            let mut grads = Gradients::zeros_like(&store);
            grads.set(id, Tensor::scalar(2.0 * x));
            adam.step(&mut store, &grads).unwrap();
        }
        assert!(store.get(id).item().abs() < 0.05);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = scalar_store(1.0);
        let mut adam = AdamState::new(&store, 0.1);
        let err = adam.step(&mut store, &Gradients::default()).unwrap_err();
        assert!(matches!(err, Error::MissingGradient(name) if name == "x"));
    }
}
