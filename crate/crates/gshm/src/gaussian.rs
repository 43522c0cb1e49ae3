//! The (epsilon, delta) profile of the Gaussian mechanism and its inverses.
//!
//! For a Gaussian perturbation whose two neighboring output distributions are
//! N(0, 1) and N(mu, 1), the tight hockey-stick divergence at epsilon is
//!
//! ```text
//! f(mu, eps) = Phi(mu/2 - eps/mu) - exp(eps) * Phi(-mu/2 - eps/mu)
//! ```
//!
//! This module evaluates f and solves it for mu (calibration to a delta
//! budget) and for eps (reading off the privacy curve at a given delta).
//! Negative eps is allowed everywhere: the expression stays the correct
//! divergence there, which the sparse-histogram accounting relies on when it
//! shifts eps by multiples of a log-probability.

use crate::normal::{cdf, log_cdf};
use crate::{GshmError, Result};

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Tight delta of the Gaussian mechanism at shift `mu` and budget `eps`.
///
/// `mu` is the mean separation in noise-standard-deviation units (sensitivity
/// over sigma). `mu = 0` collapses to max(0, 1 - e^eps): the two
/// distributions coincide, so only negative eps produces leakage. `eps` may
/// be any finite real, including negative values.
pub fn gaussian_delta(mu: f64, eps: f64) -> Result<f64> {
    if !mu.is_finite() || mu < 0.0 {
        return Err(GshmError::InvalidInput(format!(
            "gaussian_delta: mu must be finite and nonnegative, got {mu}"
        )));
    }
    if !eps.is_finite() {
        return Err(GshmError::InvalidInput(format!(
            "gaussian_delta: eps must be finite, got {eps}"
        )));
    }
    Ok(delta(mu, eps))
}

pub(crate) fn delta(mu: f64, eps: f64) -> f64 {
    if mu == 0.0 {
        return (-eps.exp_m1()).max(0.0);
    }
    if eps == 0.0 {
        // The divergence degenerates to the total variation distance
        // Phi(mu/2) - Phi(-mu/2); the symmetric difference is erf, which
        // keeps full precision even for tiny mu where both CDFs sit at 1/2.
        return libm::erf(0.5 * mu * FRAC_1_SQRT_2);
    }
    let a = 0.5 * mu - eps / mu;
    let b = -0.5 * mu - eps / mu;
    if a < -37.0 && b < -37.0 {
        // Both tails are below the f64 underflow horizon of Phi.
        return 0.0;
    }
    // The subtracted term is exp(eps) * Phi(b), assembled in log space so a
    // huge eps cannot overflow before the tiny Phi(b) cancels it.
    let d = cdf(a) - (eps + log_cdf(b)).exp();
    d.clamp(0.0, 1.0)
}

/// Mean separation whose Gaussian curve passes through (eps, delta).
///
/// Inverts `gaussian_delta` in `mu` by bisection; f is strictly increasing in
/// mu for delta values below 1. Requires eps >= 0 and delta in (0, 1).
pub fn calibrate_mu(eps: f64, delta_target: f64) -> Result<f64> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(GshmError::InvalidInput(format!(
            "calibrate_mu: eps must be finite and nonnegative, got {eps}"
        )));
    }
    if !(delta_target > 0.0 && delta_target < 1.0) {
        return Err(GshmError::InvalidInput(format!(
            "calibrate_mu: delta must lie in (0, 1), got {delta_target}"
        )));
    }
    // Bracket: delta(0, eps) = 0 for eps >= 0, and delta grows to 1 as mu
    // grows, so double until the target is enclosed.
    let mut hi = 1.0_f64;
    while delta(hi, eps) < delta_target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(GshmError::ToleranceNotReached(format!(
                "calibrate_mu: no mu below 1e6 reaches delta {delta_target} at eps {eps}"
            )));
        }
    }
    let mut lo = 0.0_f64;
    // Bisect to machine resolution on mu; 200 halvings from a bracket of at
    // most 1e6 land far below f64 spacing, so the loop always exits early.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if delta(mid, eps) < delta_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Smallest eps at which the Gaussian curve for `mu` drops to `delta`.
///
/// Inverts `gaussian_delta` in `eps` (strictly decreasing until it hits 0).
/// Returns 0 when the curve at eps = 0 is already at or below the target.
pub fn calibrate_epsilon(mu: f64, delta_target: f64) -> Result<f64> {
    if !mu.is_finite() || mu <= 0.0 {
        return Err(GshmError::InvalidInput(format!(
            "calibrate_epsilon: mu must be finite and positive, got {mu}"
        )));
    }
    if !(delta_target > 0.0 && delta_target < 1.0) {
        return Err(GshmError::InvalidInput(format!(
            "calibrate_epsilon: delta must lie in (0, 1), got {delta_target}"
        )));
    }
    if delta(mu, 0.0) <= delta_target {
        return Ok(0.0);
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while delta(mu, hi) > delta_target {
        hi *= 2.0;
        if hi > 1e9 {
            return Err(GshmError::ToleranceNotReached(format!(
                "calibrate_epsilon: no eps below 1e9 reaches delta {delta_target} at mu {mu}"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if delta(mu, mid) > delta_target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Mean separation of a sum release with per-partial shifts.
///
/// A release of `k` independent Gaussian counts at noise scale `sigma`, each
/// shifted by one record, plus `k` unit-variance pseudo-columns shifted by
/// `mu_extra`, separates the joint distributions by
/// sqrt(k / sigma^2 + k * mu_extra^2).
pub fn combined_mu(k: u64, sigma: f64, mu_extra: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(GshmError::InvalidInput(format!(
            "combined_mu: sigma must be positive, got {sigma}"
        )));
    }
    if !mu_extra.is_finite() || mu_extra < 0.0 {
        return Err(GshmError::InvalidInput(format!(
            "combined_mu: mu_extra must be finite and nonnegative, got {mu_extra}"
        )));
    }
    let k = k as f64;
    Ok((k / (sigma * sigma) + k * mu_extra * mu_extra).sqrt())
}
