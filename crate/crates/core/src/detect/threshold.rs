use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linearly interpolated quantile, `level` in `[0, 1]`.
pub fn quantile(values: &[f64], level: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = level.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Momentum-smoothed energy threshold: `κ_t = β α_t + (1-β) κ_{t-1}` where
/// `α_t` is the `τ`-quantile of the step-`t` energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub kappa: f64,
    pub beta: f64,
    pub tau: f64,
    pub step: usize,
}

impl ThresholdState {
    /// `κ_0` is the `τ`-quantile of the initial energies.
    pub fn init(energies: &[f64], tau: f64, beta: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::OutOfRange { what: "tau must lie in (0,1)", value: tau });
        }
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::OutOfRange { what: "beta must lie in [0,1]", value: beta });
        }
        Ok(Self { kappa: quantile(energies, tau), beta, tau, step: 0 })
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self {
            kappa: self.beta * alpha + (1.0 - self.beta) * self.kappa,
            step: self.step + 1,
            ..self
        }
    }

    pub fn update(self, energies: &[f64]) -> Self {
        self.with_alpha(quantile(energies, self.tau))
    }
}
