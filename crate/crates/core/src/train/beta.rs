//! Capacity control: β is tuned so the KL term tracks a target value.
//!
//! The rule is dual ascent in softplus space, `λ ← λ + η (KL - target)` with
//! `β = softplus(λ)`, so a KL above target raises β and one below lowers it,
//! and β stays positive.

use serde::{Deserialize, Serialize};

use crate::linalg::{softplus, softplus_inv};

pub const DEFAULT_BETA_STEP: f64 = 1e-3;

/// Keeps `softplus(λ)` representable as a positive double.
const LAMBDA_MIN: f64 = -700.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaController {
    pub lambda: f64,
    pub kl_target: f64,
    pub step_size: f64,
}

impl BetaController {
    pub fn new(initial_beta: f64, kl_target: f64, step_size: f64) -> Self {
        BetaController {
            lambda: softplus_inv(initial_beta),
            kl_target,
            step_size,
        }
    }

    pub fn beta(&self) -> f64 {
        softplus(self.lambda)
    }
}

pub fn update_beta(ctrl: &BetaController, kl_actual: f64) -> BetaController {
    BetaController {
        lambda: (ctrl.lambda + ctrl.step_size * (kl_actual - ctrl.kl_target)).max(LAMBDA_MIN),
        ..ctrl.clone()
    }
}

/// How β evolves during VB training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    Fixed(f64),
    Controlled(BetaController),
}

impl BetaSchedule {
    pub fn beta(&self) -> f64 {
        match self {
            BetaSchedule::Fixed(b) => *b,
            BetaSchedule::Controlled(c) => c.beta(),
        }
    }

    pub fn observe(&mut self, kl_actual: f64) {
        if let BetaSchedule::Controlled(c) = self {
            *c = update_beta(c, kl_actual);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn on_target_is_a_fixed_point() {
        let c = BetaController::new(0.3, 40.0, 1e-3);
        assert_eq!(update_beta(&c, 40.0).beta(), c.beta());
    }

    #[test]
    fn monotone_response() {
        let c = BetaController::new(0.3, 40.0, 1e-3);
        assert!(update_beta(&c, 41.0).beta() > c.beta());
        assert!(update_beta(&c, 39.0).beta() < c.beta());
    }

    #[test]
    fn beta_stays_positive() {
        let mut c = BetaController::new(1e-4, 1e6, 1.0);
        for _ in 0..100 {
            c = update_beta(&c, 0.0);
            assert!(c.beta() > 0.0);
        }
    }
}
