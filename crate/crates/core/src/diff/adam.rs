use std::collections::HashMap;

use crate::diff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::real::Real;

/// Adam with bias-corrected moments. Learning rates can be overridden per
/// parameter; entries marked non-trainable are skipped entirely.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    lr_overrides: HashMap<ParamId, f64>,
    first: HashMap<ParamId, Vec<T>>,
    second: HashMap<ParamId, Vec<T>>,
    step: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_overrides: HashMap::new(),
            first: HashMap::new(),
            second: HashMap::new(),
            step: 0,
        }
    }

    pub fn set_lr(&mut self, id: ParamId, lr: f64) {
        self.lr_overrides.insert(id, lr);
    }

    pub fn lr_for(&self, id: ParamId) -> f64 {
        self.lr_overrides.get(&id).copied().unwrap_or(self.lr)
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the accumulated gradients. Gradients are left in place.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        let active: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
        for &id in &active {
            if store.grad(id).iter().any(|g| g.is_nan()) {
                return Err(Error::NanGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_m_b1, one_m_b2) = (T::lit(1.0 - self.beta1), T::lit(1.0 - self.beta2));
        let eps = T::lit(self.eps);
        for id in active {
            let lr = self.lr_for(id);
            let step_size = T::lit(lr / bc1);
            let inv_bc2 = T::lit(1.0 / bc2);
            let len = store.get(id).len();
            let m = self.first.entry(id).or_insert_with(|| vec![T::zero(); len]);
            let v = self.second.entry(id).or_insert_with(|| vec![T::zero(); len]);
            let grads = store.grad(id).to_vec();
            let values = store.value_mut(id);
            for i in 0..len {
                let g = grads[i];
                m[i] = b1 * m[i] + one_m_b1 * g;
                v[i] = b2 * v[i] + one_m_b2 * g * g;
                let denom = (v[i] * inv_bc2).sqrt() + eps;
                values[i] -= step_size * m[i] / denom;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("p", &[3], vec![1.0, -2.0, 3.0]).unwrap();
        let mut adam = Adam::new(1e-3);
        adam.step(&mut store).unwrap();
        assert_eq!(store.value(id), &[1.0, -2.0, 3.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("p", &[1], vec![0.0]).unwrap();
        store.grad_mut(id)[0] = 1.0;
        let mut adam = Adam::new(1e-3);
        adam.step(&mut store).unwrap();
        let expected = -1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((store.value(id)[0] - expected).abs() < 1e-15);
        // gradients are left for the caller to clear
        assert_eq!(store.grad(id)[0], 1.0);
    }

    /// Independent scalar recurrence of the same update rule.
    fn scalar_adam_on_square(theta0: f64, lr: f64, steps: usize) -> f64 {
        let (mut m, mut v, mut theta) = (0.0f64, 0.0f64, theta0);
        for t in 1..=steps {
            let g = 2.0 * theta;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9f64.powi(t as i32));
            let v_hat = v / (1.0 - 0.999f64.powi(t as i32));
            theta -= lr * m_hat / (v_hat.sqrt() + 1e-8);
        }
        theta
    }

    #[test]
    fn minimizes_square_like_the_reference_recurrence() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("theta", &[1], vec![1.0]).unwrap();
        let mut adam = Adam::new(0.1);
        for _ in 0..100 {
            store.zero_grads();
            let th = store.value(id)[0];
            store.grad_mut(id)[0] = 2.0 * th;
            adam.step(&mut store).unwrap();
        }
        let theta = store.value(id)[0];
        let reference = scalar_adam_on_square(1.0, 0.1, 100);
        assert!((theta - reference).abs() < 1e-12, "{theta} vs {reference}");
        assert!(theta.abs() < 0.05, "|theta| = {}", theta.abs());
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut store = ParamStore::<f32>::new();
        store.insert("ok", &[1], vec![0.0]).unwrap();
        let bad = store.insert("f_col.l0.w", &[2], vec![0.0, 0.0]).unwrap();
        store.grad_mut(bad)[1] = f32::NAN;
        let err = Adam::new(1e-3).step(&mut store).unwrap_err();
        assert!(err.to_string().contains("f_col.l0.w"));
    }

    #[test]
    fn frozen_parameters_are_skipped() {
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("frozen", &[1], vec![1.0]).unwrap();
        store.set_trainable(id, false);
        store.grad_mut(id)[0] = 5.0;
        Adam::new(0.1).step(&mut store).unwrap();
        assert_eq!(store.value(id)[0], 1.0);
    }
}
