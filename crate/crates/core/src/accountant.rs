//! Rényi-DP accounting for `T` composed (non-subsampled) Gaussian mechanisms.
//!
//! A Gaussian mechanism with sensitivity 1 and noise multiplier `σ` is
//! `(α, α/(2σ²))`-RDP; `T` compositions add, and conversion to `(ε, δ)` gives
//! `ε = T·α/(2σ²) + ln(1/δ)/(α−1)`, minimized over orders `α > 1`.
//!
//! No amplification by subsampling is claimed, so the reported epsilon is an
//! upper bound that is looser than a moments accountant would give.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIGMA_MIN: f64 = 1e-3;
pub const SIGMA_MAX: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountantQuery {
    pub sigma: f64,
    pub steps: usize,
    pub delta: f64,
}

impl AccountantQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", "must be finite and > 0"));
        }
        if self.steps < 1 {
            return Err(Error::config("steps", "must be >= 1"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", "must lie in (0,1)"));
        }
        Ok(())
    }
}

/// The fixed order grid `{1.25, 1.5, ..., 512}` (step 0.25).
pub fn rdp_orders() -> Vec<f64> {
    (5..=2048).map(|i| i as f64 * 0.25).collect()
}

fn eps_at_order(q: &AccountantQuery, alpha: f64) -> f64 {
    let t = q.steps as f64;
    t * alpha / (2.0 * q.sigma * q.sigma) + (1.0 / q.delta).ln() / (alpha - 1.0)
}

/// Minimum of the RDP conversion over the fixed order grid only.
pub fn epsilon_grid(q: &AccountantQuery) -> Result<f64> {
    q.validate()?;
    Ok(rdp_orders()
        .into_iter()
        .map(|a| eps_at_order(q, a))
        .fold(f64::INFINITY, f64::min))
}

/// The order minimizing the conversion: `1 + σ·sqrt(2 ln(1/δ) / T)`.
pub fn optimal_order(q: &AccountantQuery) -> f64 {
    1.0 + q.sigma * (2.0 * (1.0 / q.delta).ln() / q.steps as f64).sqrt()
}

/// Closed form of the continuous optimum: `T/(2σ²) + sqrt(2T ln(1/δ))/σ`.
pub fn epsilon_closed_form(q: &AccountantQuery) -> Result<f64> {
    q.validate()?;
    let t = q.steps as f64;
    Ok(t / (2.0 * q.sigma * q.sigma) + (2.0 * t * (1.0 / q.delta).ln()).sqrt() / q.sigma)
}

/// Epsilon spent by `steps` Gaussian steps at noise multiplier `sigma`.
///
/// Takes the minimum over the order grid together with the analytic optimal
/// order, so the bound stays tight when the optimum lies beyond 512 (large σ).
pub fn epsilon_for(q: &AccountantQuery) -> Result<f64> {
    let grid = epsilon_grid(q)?;
    Ok(grid.min(eps_at_order(q, optimal_order(q))))
}

/// Smallest-noise `σ` with `epsilon_for(σ) <= target`, to within a relative
/// `1e-4` of the target. Never returns a σ that over-spends the budget.
pub fn calibrate_sigma(target_epsilon: f64, steps: usize, delta: f64) -> Result<f64> {
    if !(target_epsilon > 0.0 && target_epsilon.is_finite()) {
        return Err(Error::config("epsilon", "target must be finite and > 0"));
    }
    let eps = |sigma: f64| {
        epsilon_for(&AccountantQuery {
            sigma,
            steps,
            delta,
        })
    };
    let (mut lo, mut hi) = (SIGMA_MIN, SIGMA_MAX);
    if eps(hi)? > target_epsilon {
        return Err(Error::Unreachable {
            target: target_epsilon,
            lo,
            hi,
        });
    }
    if eps(lo)? <= target_epsilon {
        return Ok(lo);
    }
    // invariant: eps(lo) > target >= eps(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let e = eps(mid)?;
        if e > target_epsilon {
            lo = mid;
        } else {
            hi = mid;
            if e >= target_epsilon * (1.0 - 1e-4) {
                break;
            }
        }
    }
    Ok(hi)
}
