//! Regime bookkeeping for epsilon ladders: dislocation counts, energy
//! scales, and the sub/critical/supercritical classification.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegimeError {
    #[error("invalid regime parameters: {0}")]
    Invalid(String),
}

/// How the dislocation count n_eps grows along the ladder.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NepsRule {
    Constant { value: f64 },
    Log,
    LogPow { exponent: f64 },
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeLabel {
    Subcritical,
    Critical,
    Supercritical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeParams {
    /// Decreasing positive ladder of epsilon values.
    pub eps: Vec<f64>,
    pub rule: NepsRule,
}

impl RegimeParams {
    pub fn validate(&self) -> Result<(), RegimeError> {
        if self.eps.is_empty() {
            return Err(RegimeError::Invalid("empty epsilon ladder".into()));
        }
        for w in self.eps.windows(2) {
            if !(w[1] > 0.0 && w[1] < w[0]) {
                return Err(RegimeError::Invalid(format!(
                    "ladder not decreasing positive: {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if self.eps[0] >= 1.0 {
            return Err(RegimeError::Invalid("epsilon must be < 1".into()));
        }
        if let NepsRule::Table { values } = &self.rule {
            if values.len() != self.eps.len() {
                return Err(RegimeError::Invalid(
                    "n_eps table length does not match the ladder".into(),
                ));
            }
        }
        if let NepsRule::LogPow { exponent } = self.rule {
            if exponent <= 1.0 {
                return Err(RegimeError::Invalid("log-power exponent must be > 1".into()));
            }
        }
        // dilution (n_eps * eps -> 0) and log n_eps << log(1/eps) must hold
        // in the monotone, desk-scale sense along the ladder
        for i in 1..self.eps.len() {
            let prev = self.n_eps(i - 1) * self.eps[i - 1];
            let cur = self.n_eps(i) * self.eps[i];
            if cur >= prev {
                return Err(RegimeError::Invalid(format!(
                    "n_eps * eps not decreasing at step {i}: {prev} -> {cur}"
                )));
            }
            let lp = self.n_eps(i - 1).ln() / (1.0 / self.eps[i - 1]).ln();
            let lc = self.n_eps(i).ln() / (1.0 / self.eps[i]).ln();
            if lc >= lp + 1e-12 && lc > 0.5 {
                return Err(RegimeError::Invalid(format!(
                    "log n_eps / log(1/eps) not vanishing at step {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn n_eps(&self, i: usize) -> f64 {
        let log_inv = (1.0 / self.eps[i]).ln();
        match &self.rule {
            NepsRule::Constant { value } => *value,
            NepsRule::Log => log_inv,
            NepsRule::LogPow { exponent } => log_inv.powf(*exponent),
            NepsRule::Table { values } => values[i],
        }
    }

    /// Energy / displacement rescaling: h^2 = max{n^2 eps^2, n eps^2 log(1/eps)}.
    pub fn h_eps_sq(&self, i: usize) -> f64 {
        let eps = self.eps[i];
        let n = self.n_eps(i);
        let log_inv = (1.0 / eps).ln();
        (n * n * eps * eps).max(n * eps * eps * log_inv)
    }

    /// Regime classification at step i: the label flips where
    /// n_eps / log(1/eps) crosses 1.
    pub fn label(&self, i: usize) -> RegimeLabel {
        let ratio = self.n_eps(i) / (1.0 / self.eps[i]).ln();
        if ratio < 1.0 - 1e-9 {
            RegimeLabel::Subcritical
        } else if ratio > 1.0 + 1e-9 {
            RegimeLabel::Supercritical
        } else {
            RegimeLabel::Critical
        }
    }

    /// Typical inter-dislocation spacing scale.
    pub fn rho_eps(&self, i: usize) -> f64 {
        self.n_eps(i).powf(-0.5)
    }

    /// Ball radius for the self/elastic energy split: r_eps =
    /// min(rho_eps, n_eps^{-2/3}) satisfies n r^2 -> 0 and
    /// log(1/r) << log(1/eps) in all supported regimes.
    pub fn r_eps(&self, i: usize) -> f64 {
        self.rho_eps(i).min(self.n_eps(i).powf(-2.0 / 3.0))
    }
}
