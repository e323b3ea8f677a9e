//! Closed-form bound calculators for approximation, optimization, and
//! generalization error.
//!
//! None of the constants here are fitted by the library; they are inputs,
//! and the shipped presets use 1.0 placeholders.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Constants feeding the three calculators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    // Approximation: L_ce * C1 / sqrt(M) + 2 C2 L_ce L_sigma eps_tt.
    pub l_ce: f64,
    pub c1: f64,
    pub c2: f64,
    pub l_sigma: f64,
    pub eps_tt: f64,
    // Optimization: C0 * exp(-lambda_min * t).
    pub c0: f64,
    pub lambda_min: f64,
    pub t: f64,
    // Generalization: risk + 2 B L_ell kappa / sqrt(N) + gamma sqrt(log(1/delta) / 2N).
    pub b: f64,
    pub l_ell: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub n: usize,
    pub delta: f64,
    pub empirical_risk: f64,
}

impl BoundInputs {
    /// All-ones placeholder constants with `N = 100`, `delta = 0.1`.
    pub fn placeholder() -> Self {
        BoundInputs {
            l_ce: 1.0,
            c1: 1.0,
            c2: 1.0,
            l_sigma: 1.0,
            eps_tt: 0.0,
            c0: 1.0,
            lambda_min: 0.0,
            t: 0.0,
            b: 1.0,
            l_ell: 1.0,
            kappa: 1.0,
            gamma: 1.0,
            n: 100,
            delta: 0.1,
            empirical_risk: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("l_ce", self.l_ce),
            ("c1", self.c1),
            ("c2", self.c2),
            ("l_sigma", self.l_sigma),
            ("eps_tt", self.eps_tt),
            ("c0", self.c0),
            ("lambda_min", self.lambda_min),
            ("t", self.t),
            ("b", self.b),
            ("l_ell", self.l_ell),
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("empirical_risk", self.empirical_risk),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must lie in (0, 1], got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Approximation error bound: `L_ce C1 / sqrt(M) + 2 C2 L_ce L_sigma eps_tt`.
pub fn approximation_bound(inputs: &BoundInputs, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidArgument("hidden width must be >= 1".into()));
    }
    Ok(inputs.l_ce * inputs.c1 / (m as f64).sqrt()
        + 2.0 * inputs.c2 * inputs.l_ce * inputs.l_sigma * inputs.eps_tt)
}

/// Optimization error bound under gradient flow: `C0 exp(-lambda_min t)`.
pub fn optimization_bound(c0: f64, lambda_min: f64, t: f64) -> Result<f64> {
    if c0 < 0.0 {
        return Err(Error::InvalidArgument("c0 must be >= 0".into()));
    }
    Ok(c0 * (-lambda_min * t).exp())
}

/// Expected-risk bound:
/// `risk + 2 B L_ell kappa / sqrt(N) + gamma sqrt(log(1/delta) / (2N))`.
pub fn generalization_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    let n = inputs.n as f64;
    Ok(inputs.empirical_risk
        + 2.0 * inputs.b * inputs.l_ell * inputs.kappa / n.sqrt()
        + inputs.gamma * ((1.0 / inputs.delta).ln() / (2.0 * n)).sqrt())
}

/// Empirical Rademacher complexity bound: `B kappa / sqrt(N)`. `kappa` may be
/// estimated as the square root of the largest kernel diagonal.
pub fn rademacher_bound(b: f64, kappa: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if b < 0.0 || kappa < 0.0 {
        return Err(Error::InvalidArgument("b and kappa must be >= 0".into()));
    }
    Ok(b * kappa / (n as f64).sqrt())
}
