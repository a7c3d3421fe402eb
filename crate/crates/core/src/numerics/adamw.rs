use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 5e-6,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// One AdamW step with bias-corrected moments and decoupled weight decay.
///
/// Missing gradient entries are treated as zero; gradients for unknown names
/// or with the wrong shape are rejected before anything is modified.
pub fn adamw_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Tensor>,
    cfg: &AdamWConfig,
) -> Result<()> {
    for (name, g) in grads {
        let slot = store
            .slots
            .get(name)
            .ok_or_else(|| Error::Config(format!("gradient for unknown parameter '{name}'")))?;
        if slot.value.shape() != g.shape() {
            return Err(Error::Shape(format!(
                "gradient for '{name}' is {:?}, parameter is {:?}",
                g.shape(),
                slot.value.shape()
            )));
        }
    }
    store.step += 1;
    let t = store.step as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    for (name, slot) in store.slots.iter_mut() {
        let grad = grads.get(name);
        let w = slot.value.data_mut();
        let m = slot.m.data_mut();
        let v = slot.v.data_mut();
        for i in 0..w.len() {
            let g = grad.map_or(0.0, |g| g.data()[i]);
            w[i] -= cfg.lr * cfg.weight_decay * w[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert("w", Tensor::scalar(w)).unwrap();
        s
    }

    fn grad(g: f64) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::scalar(g))])
    }

    #[test]
    fn zero_gradient_zero_decay_is_identity() {
        let mut s = scalar_store(0.37);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..5 {
            adamw_step(&mut s, &grad(0.0), &cfg).unwrap();
        }
        assert_eq!(s.get("w").unwrap().item(), 0.37);
        assert_eq!(s.step(), 5);
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps)
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        for g in [2.5, -0.003, 40.0] {
            let mut s = scalar_store(1.0);
            adamw_step(&mut s, &grad(g), &cfg).unwrap();
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((s.get("w").unwrap().item() - expected).abs() < 1e-15);
        }
    }

    /// Scalar AdamW for f(w) = w^2, written out independently.
    fn simulate(lr: f64, steps: usize) -> Vec<f64> {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut out = Vec::new();
        for t in 1..=steps as i32 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            out.push(w);
        }
        out
    }

    #[test]
    fn quadratic_descent_matches_recurrence() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut s = scalar_store(1.0);
        let expected = simulate(0.1, 20);
        let mut prev = 1.0f64;
        for (step, &e) in expected.iter().enumerate() {
            let w = s.get("w").unwrap().item();
            adamw_step(&mut s, &grad(2.0 * w), &cfg).unwrap();
            let w = s.get("w").unwrap().item();
            assert!((w - e).abs() < 1e-12);
            // with lr = 0.1 momentum carries w past the minimum at step 12
            if step < 11 {
                assert!(w.abs() < prev);
            }
            prev = w.abs();
        }
        assert!(expected[11] < 0.0);
    }

    #[test]
    fn quadratic_descent_small_lr_is_monotone() {
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut s = scalar_store(1.0);
        let mut prev = 1.0f64;
        for _ in 0..20 {
            let w = s.get("w").unwrap().item();
            adamw_step(&mut s, &grad(2.0 * w), &cfg).unwrap();
            let w = s.get("w").unwrap().item();
            assert!(w.abs() < prev);
            prev = w.abs();
        }
    }

    #[test]
    fn decay_is_decoupled() {
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut s = scalar_store(2.0);
        adamw_step(&mut s, &grad(0.0), &cfg).unwrap();
        assert!((s.get("w").unwrap().item() - 2.0 * (1.0 - 0.05)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = scalar_store(1.0);
        let bad = BTreeMap::from([("w".to_string(), Tensor::vector(vec![1.0, 2.0]))]);
        assert!(matches!(
            adamw_step(&mut s, &bad, &AdamWConfig::default()),
            Err(Error::Shape(_))
        ));
        assert_eq!(s.step(), 0);
    }
}
