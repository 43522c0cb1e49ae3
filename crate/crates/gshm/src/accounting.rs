//! Exact (epsilon, delta) accounting for the Gaussian sparse histogram
//! mechanism, plus the looser sum-of-deltas accounting it improves on.
//!
//! The mechanism releases, for every group with true count above a hard
//! threshold tau_low, the count plus N(0, sigma^2) noise, and keeps the
//! release only if the noisy count clears tau_high. One user can touch up to
//! c_u groups. The exact privacy loss at a given epsilon is the maximum of
//! three expressions over the ways the user's groups split between "far
//! above threshold" rows and "exactly at threshold" rows:
//!
//! - all c_u rows at threshold: delta_infinite = 1 - beta^c_u with
//!   beta = Phi((tau_high - tau_low)/sigma), an epsilon-independent floor;
//! - a_equal at threshold and a_plus = c_u - a_equal above, loss dominated
//!   by the side that emits the threshold rows:
//!   1 - beta^a_equal + beta^a_equal * f(mu(a_plus), eps2(a_equal));
//! - the swapped side: f(mu(a_plus), eps3(a_equal));
//!
//! where f is the Gaussian hockey-stick curve, mu(a_plus) the combined mean
//! separation of the emitted rows, and eps2/eps3 = epsilon -/+
//! a_equal * log(beta) the budget shifted by the suppression odds.

use serde::{Deserialize, Serialize};

use crate::gaussian;
use crate::normal::{log_cdf, one_minus_cdf_pow};
use crate::{GshmError, Result};

/// Parameters of one sparse histogram release.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GshmParams {
    tau_low: f64,
    tau_high: f64,
    sigma: f64,
    c_u: u64,
    mu_o: f64,
    num_columns: u64,
}

impl GshmParams {
    /// Validates and builds the parameter set.
    ///
    /// `tau_low` is the deterministic count threshold, `tau_high` the noisy
    /// one (must be strictly larger), `sigma` the count-noise scale, `c_u`
    /// the maximum number of groups one user can contribute to, `mu_o` the
    /// mean-separation contribution of the extra released columns per group
    /// (0 when only the count is released), `num_columns` the total number
    /// of released columns per group.
    pub fn new(
        tau_low: f64,
        tau_high: f64,
        sigma: f64,
        c_u: u64,
        mu_o: f64,
        num_columns: u64,
    ) -> Result<Self> {
        if !tau_low.is_finite() || tau_low < 0.0 {
            return Err(GshmError::InvalidInput(format!(
                "tau_low must be finite and nonnegative, got {tau_low}"
            )));
        }
        if !tau_high.is_finite() || tau_high <= tau_low {
            return Err(GshmError::InvalidInput(format!(
                "tau_high must be finite and exceed tau_low, got tau_high {tau_high} vs tau_low {tau_low}"
            )));
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(GshmError::InvalidInput(format!(
                "sigma must be finite and positive, got {sigma}"
            )));
        }
        if c_u == 0 {
            return Err(GshmError::InvalidInput("c_u must be at least 1".into()));
        }
        if !mu_o.is_finite() || mu_o < 0.0 {
            return Err(GshmError::InvalidInput(format!(
                "mu_o must be finite and nonnegative, got {mu_o}"
            )));
        }
        if num_columns == 0 {
            return Err(GshmError::InvalidInput(
                "num_columns must be at least 1".into(),
            ));
        }
        if num_columns == 1 && mu_o != 0.0 {
            return Err(GshmError::InvalidInput(
                "mu_o must be 0 when only the count column is released".into(),
            ));
        }
        Ok(Self {
            tau_low,
            tau_high,
            sigma,
            c_u,
            mu_o,
            num_columns,
        })
    }

    pub fn tau_low(&self) -> f64 {
        self.tau_low
    }
    pub fn tau_high(&self) -> f64 {
        self.tau_high
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn c_u(&self) -> u64 {
        self.c_u
    }
    pub fn mu_o(&self) -> f64 {
        self.mu_o
    }
    pub fn num_columns(&self) -> u64 {
        self.num_columns
    }

    /// Threshold gap tau_high - tau_low.
    pub fn gap(&self) -> f64 {
        self.tau_high - self.tau_low
    }

    /// Same parameters with a different noisy threshold.
    pub fn with_tau_high(&self, tau_high: f64) -> Result<Self> {
        Self::new(
            self.tau_low,
            tau_high,
            self.sigma,
            self.c_u,
            self.mu_o,
            self.num_columns,
        )
    }

    /// Same parameters with a different noise scale.
    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        Self::new(
            self.tau_low,
            self.tau_high,
            sigma,
            self.c_u,
            self.mu_o,
            self.num_columns,
        )
    }
}

/// Which of the three maximized expressions produced `delta_exact`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BindingTerm {
    /// All c_u rows at threshold; the epsilon-independent floor.
    InfiniteOnly,
    /// Suppression mass plus the shifted Gaussian curve (eps2 side).
    MixedTerm,
    /// The swapped neighbor direction (eps3 side).
    SwappedTerm,
}

impl std::fmt::Display for BindingTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BindingTerm::InfiniteOnly => "infinite_only",
            BindingTerm::MixedTerm => "mixed_term",
            BindingTerm::SwappedTerm => "swapped_term",
        })
    }
}

/// Full result of one exact accounting evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccountingReport {
    pub epsilon: f64,
    pub delta_exact: f64,
    pub delta_infinite: f64,
    pub delta_gaussian: f64,
    /// The a_equal attaining the maximum; c_u when the floor term binds.
    pub argmax_a_equal: u64,
    pub binding_term: BindingTerm,
}

/// Scan configuration for `exact_delta_with`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScanOptions {
    /// Stop the a_equal scan once both inner terms have decreased for 1000
    /// consecutive steps. Off by default: the full scan is cheap and exact.
    pub early_exit: bool,
    /// Keep the scan on one thread regardless of c_u.
    pub force_serial: bool,
}

/// Probability that at least one of c_u at-threshold rows survives both
/// thresholds, 1 - Phi(gap/sigma)^c_u. Epsilon-independent.
pub fn delta_infinite(params: &GshmParams) -> f64 {
    one_minus_cdf_pow(params.gap() / params.sigma, params.c_u)
        .expect("gap/sigma is finite by construction")
}

/// Combined mean separation when a_plus of the user's rows are emitted on
/// both neighbors: sqrt(a_plus / sigma^2 + a_plus * mu_o^2).
pub fn mu_of_a_plus(params: &GshmParams, a_plus: u64) -> Result<f64> {
    if a_plus == 0 || a_plus > params.c_u {
        return Err(GshmError::InvalidInput(format!(
            "a_plus must lie in [1, c_u = {}], got {a_plus}",
            params.c_u
        )));
    }
    let a = a_plus as f64;
    Ok((a / (params.sigma * params.sigma) + a * params.mu_o * params.mu_o).sqrt())
}

/// Budget shifts induced by a_equal at-threshold rows:
/// (eps - a_equal log beta, eps + a_equal log beta), beta = Phi(gap/sigma).
///
/// The first component is >= epsilon, the second may be negative; downstream
/// evaluation of the Gaussian curve is valid for any real budget.
pub fn shifted_epsilons(params: &GshmParams, epsilon: f64, a_equal: u64) -> (f64, f64) {
    let shift = a_equal as f64 * log_cdf(params.gap() / params.sigma);
    (epsilon - shift, epsilon + shift)
}

// Candidate in the a_equal scan; the ordering is total (values are clamped
// and never NaN), so any reduction grouping yields the same winner.
#[derive(Clone, Copy)]
struct Candidate {
    value: f64,
    a_equal: u64,
    term: BindingTerm,
}

impl Candidate {
    fn rank(term: BindingTerm) -> u8 {
        match term {
            BindingTerm::MixedTerm => 0,
            BindingTerm::SwappedTerm => 1,
            BindingTerm::InfiniteOnly => 2,
        }
    }

    /// True when self should replace other: larger value, ties toward
    /// smaller a_equal, then toward the mixed term.
    fn beats(&self, other: &Candidate) -> bool {
        if self.value != other.value {
            return self.value > other.value;
        }
        if self.a_equal != other.a_equal {
            return self.a_equal < other.a_equal;
        }
        Self::rank(self.term) < Self::rank(other.term)
    }
}

fn clamp_term(raw: f64, what: &str, a_equal: u64) -> Result<f64> {
    if raw < -1e-12 {
        return Err(GshmError::InternalConsistency(format!(
            "{what} evaluated to {raw:e} at a_equal = {a_equal}; negative beyond rounding"
        )));
    }
    Ok(raw.clamp(0.0, 1.0))
}

/// Tight delta of the mechanism at budget `epsilon`.
///
/// Evaluates the three-term maximum over every split of the user's c_u rows
/// and reports which split and which expression bind. Runs in linear time in
/// c_u; splits the scan across threads above a size threshold with a
/// deterministic reduction.
pub fn exact_delta(params: &GshmParams, epsilon: f64) -> Result<AccountingReport> {
    exact_delta_with(params, epsilon, ScanOptions::default())
}

const PARALLEL_THRESHOLD: u64 = 4096;
const EARLY_EXIT_RUN: u64 = 1000;

pub fn exact_delta_with(
    params: &GshmParams,
    epsilon: f64,
    options: ScanOptions,
) -> Result<AccountingReport> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(GshmError::InvalidInput(format!(
            "exact_delta: epsilon must be finite and nonnegative, got {epsilon}"
        )));
    }
    let log_beta = log_cdf(params.gap() / params.sigma);
    let unit_mu2 = 1.0 / (params.sigma * params.sigma) + params.mu_o * params.mu_o;
    let delta_inf = delta_infinite(params);

    let eval = |a_equal: u64| -> Result<Candidate> {
        let a_eq = a_equal as f64;
        let a_plus = (params.c_u - a_equal) as f64;
        let mu = (a_plus * unit_mu2).sqrt();
        let shift = a_eq * log_beta;
        // Suppression mass 1 - beta^a_equal, then the shifted curve scaled by
        // the survival mass beta^a_equal.
        let beta_pow = shift.exp();
        let mixed_raw = -shift.exp_m1() + beta_pow * gaussian::delta(mu, epsilon - shift);
        let swapped_raw = gaussian::delta(mu, epsilon + shift);
        let mixed = Candidate {
            value: clamp_term(mixed_raw, "mixed term", a_equal)?,
            a_equal,
            term: BindingTerm::MixedTerm,
        };
        let swapped = Candidate {
            value: clamp_term(swapped_raw, "swapped term", a_equal)?,
            a_equal,
            term: BindingTerm::SwappedTerm,
        };
        Ok(if mixed.beats(&swapped) { mixed } else { swapped })
    };

    // a_equal = 0 exists for every c_u >= 1 and both terms there equal the
    // plain Gaussian curve at mu(c_u).
    let delta_gaussian = gaussian::delta((params.c_u as f64 * unit_mu2).sqrt(), epsilon);

    let use_parallel =
        !options.force_serial && !options.early_exit && params.c_u > PARALLEL_THRESHOLD;
    let best_scan = if use_parallel {
        use rayon::prelude::*;
        (0..params.c_u)
            .into_par_iter()
            .map(eval)
            .try_reduce_with(|a, b| Ok(if a.beats(&b) { a } else { b }))
            .expect("c_u >= 1 yields at least one candidate")?
    } else {
        let mut best = eval(0)?;
        let mut mixed_prev = f64::INFINITY;
        let mut swapped_prev = f64::INFINITY;
        let mut falling_run = 0u64;
        for a_equal in 1..params.c_u {
            let a_eq = a_equal as f64;
            let a_plus = (params.c_u - a_equal) as f64;
            let mu = (a_plus * unit_mu2).sqrt();
            let shift = a_eq * log_beta;
            let beta_pow = shift.exp();
            let mixed_raw = -shift.exp_m1() + beta_pow * gaussian::delta(mu, epsilon - shift);
            let swapped_raw = gaussian::delta(mu, epsilon + shift);
            let mixed = clamp_term(mixed_raw, "mixed term", a_equal)?;
            let swapped = clamp_term(swapped_raw, "swapped term", a_equal)?;
            let cand = if mixed >= swapped {
                Candidate {
                    value: mixed,
                    a_equal,
                    term: BindingTerm::MixedTerm,
                }
            } else {
                Candidate {
                    value: swapped,
                    a_equal,
                    term: BindingTerm::SwappedTerm,
                }
            };
            if cand.beats(&best) {
                best = cand;
            }
            if options.early_exit {
                if mixed < mixed_prev && swapped < swapped_prev {
                    falling_run += 1;
                    if falling_run >= EARLY_EXIT_RUN {
                        break;
                    }
                } else {
                    falling_run = 0;
                }
                mixed_prev = mixed;
                swapped_prev = swapped;
            }
        }
        best
    };

    let floor = Candidate {
        value: delta_inf,
        a_equal: params.c_u,
        term: BindingTerm::InfiniteOnly,
    };
    let winner = if best_scan.beats(&floor) { best_scan } else { floor };

    Ok(AccountingReport {
        epsilon,
        delta_exact: winner.value,
        delta_infinite: delta_inf,
        delta_gaussian,
        argmax_a_equal: winner.a_equal,
        binding_term: winner.term,
    })
}

/// Prior-art accounting: Gaussian curve at the full sensitivity plus the
/// floor, capped at 1. Always at least `exact_delta` on the same inputs.
pub fn add_the_deltas(params: &GshmParams, epsilon: f64) -> Result<f64> {
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(GshmError::InvalidInput(format!(
            "add_the_deltas: epsilon must be finite and nonnegative, got {epsilon}"
        )));
    }
    let mu = mu_of_a_plus(params, params.c_u)?;
    Ok((gaussian::delta(mu, epsilon) + delta_infinite(params)).min(1.0))
}

/// For c_u = 1, the ratio of the calibrated threshold gap under sum-of-deltas
/// accounting to the gap under exact accounting:
/// quantile(1 - delta + delta_gaussian) / quantile(1 - delta).
pub fn threshold_ratio_cu1(delta: f64, delta_gaussian: f64) -> Result<f64> {
    if !(delta_gaussian > 0.0 && delta_gaussian <= delta) {
        return Err(GshmError::InvalidInput(format!(
            "threshold_ratio_cu1: need 0 < delta_gaussian <= delta, got delta {delta}, delta_gaussian {delta_gaussian}"
        )));
    }
    if !(delta < 0.5) {
        return Err(GshmError::InvalidInput(format!(
            "threshold_ratio_cu1: delta must be below 1/2 so both quantiles are positive, got {delta}"
        )));
    }
    let num_p = 1.0 - delta + delta_gaussian;
    if !(num_p < 1.0) {
        return Err(GshmError::InvalidInput(format!(
            "threshold_ratio_cu1: 1 - delta + delta_gaussian must stay below 1, got {num_p}"
        )));
    }
    let num = crate::normal::quantile(num_p);
    let den = crate::normal::quantile(1.0 - delta);
    Ok(num / den)
}
