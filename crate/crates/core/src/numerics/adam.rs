//! Bias-corrected Adam.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NumericsError, ParameterStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has an entry in `grads`.
    ///
    /// All gradients are checked before anything is written, so a
    /// divergence leaves the parameters untouched.
    pub fn step(
        &mut self,
        params: &mut ParameterStore,
        grads: &BTreeMap<String, Tensor>,
    ) -> Result<(), NumericsError> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(NumericsError::Shape {
                    node: format!("adam:{name}"),
                    detail: format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                });
            }
            if !g.all_finite() {
                return Err(NumericsError::Divergence {
                    param: name.clone(),
                    step: self.step + 1,
                });
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: Vec<f64>) -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("w", Tensor::vector(values));
        s
    }

    fn grads(values: Vec<f64>) -> BTreeMap<String, Tensor> {
        BTreeMap::from([("w".to_string(), Tensor::vector(values))])
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = store(vec![1.0, -2.0, 0.5]);
        let mut adam = AdamState::new(AdamConfig::with_lr(1e-3));
        adam.step(&mut p, &grads(vec![3.0, -0.2, 50.0])).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((w[1] - (-2.0 + 1e-3)).abs() < 1e-9);
        assert!((w[2] - (0.5 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = store(vec![1.0, 2.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        adam.step(&mut p, &grads(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.get("w").unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn nan_gradient_aborts_without_writing() {
        let mut p = store(vec![1.0, 2.0]);
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam.step(&mut p, &grads(vec![0.1, f64::NAN])).unwrap_err();
        assert!(matches!(err, NumericsError::Divergence { step: 1, .. }));
        assert_eq!(p.get("w").unwrap().data(), &[1.0, 2.0]);
        assert_eq!(adam.steps_taken(), 0);
    }

    #[test]
    fn two_constant_steps_match_scripted_trace() {
        // Scripted independently: m1 = 0.1g, v1 = 0.001g², m̂ = g, v̂ = g² → Δ = lr·g/(|g|+ε);
        // m2 = 0.19g, v2 = 0.001999g², m̂ = 0.19g/0.19 = g, v̂ = 0.001999g²/0.001999 = g².
        let g = 0.25;
        let lr = 0.001;
        let eps = 1e-8;
        let step = lr * g / (g + eps);
        let expected = 1.0 - 2.0 * step;
        let mut p = store(vec![1.0]);
        let mut adam = AdamState::new(AdamConfig::with_lr(lr));
        adam.step(&mut p, &grads(vec![g])).unwrap();
        adam.step(&mut p, &grads(vec![g])).unwrap();
        assert!((p.get("w").unwrap().data()[0] - expected).abs() < 1e-15);
    }
}
