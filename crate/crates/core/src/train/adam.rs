use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Flatten;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment accumulators for one flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn for_params<P: Flatten>(params: &P, config: AdamConfig) -> Self {
        AdamState::new(params.num_params(), config)
    }

    /// Bias-corrected Adam step with learning rate `lr` (overriding the
    /// configured one).
    pub fn update_with_lr(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, state sized for {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        self.update_with_lr(params, grads, self.config.lr)
    }

    /// Steps a structured parameter set with a gradient of the same shape.
    pub fn step_params<P: Flatten>(&mut self, params: &mut P, grads: &P, lr: f64) -> Result<()> {
        let mut flat = params.flatten();
        self.update_with_lr(&mut flat, &grads.flatten(), lr)?;
        params.assign(&flat);
        Ok(())
    }
}

pub fn adam_update(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    state.update(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            adam_update(&mut p, &[0.0; 3], &mut st).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut st = AdamState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        adam_update(&mut p, &[2.0], &mut st).unwrap();
        // m̂ = g, v̂ = g², so Δ = -lr · g / (|g| + ε)
        assert!((p[0] + 1e-3).abs() <= 1e-6);
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(1, cfg);
        let mut x = vec![0.0];
        for _ in 0..2000 {
            let g = 2.0 * (x[0] - 3.0);
            adam_update(&mut x, &[g], &mut st).unwrap();
        }
        assert!((x[0] - 3.0).abs() <= 1e-2, "x = {}", x[0]);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut p = vec![0.0; 2];
        assert!(matches!(
            adam_update(&mut p, &[1.0], &mut st),
            Err(Error::Shape(_))
        ));
    }
}
