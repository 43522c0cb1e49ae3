//! Solvers on top of the accounting: minimal noisy-threshold gap, minimal
//! noise scale, epsilon inversion, and delta-ratio curves, each under either
//! the exact accounting or the sum-of-deltas accounting.
//!
//! Infeasibility is a result, not an error. Under sum-of-deltas accounting a
//! target below the Gaussian term's floor cannot be met by any threshold
//! gap, and the case study's central comparison rests on exactly that, so
//! solvers return [`CalibrationOutcome::Infeasible`] with a reason instead
//! of failing.

use serde::{Deserialize, Serialize};

use crate::accounting::{self, GshmParams};
use crate::gaussian;
use crate::normal::quantile;
use crate::{GshmError, Result};

/// Which accounting a solver optimizes against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accounting {
    Exact,
    AddTheDeltas,
}

impl std::fmt::Display for Accounting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Accounting::Exact => "exact",
            Accounting::AddTheDeltas => "add-the-deltas",
        })
    }
}

/// Whether the threshold gap is solved over the reals or over integers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMode {
    /// Continuous gap, solved to 1e-6 absolute.
    #[default]
    RealValued,
    /// Smallest integer gap meeting the target (count thresholds are
    /// conventionally integers).
    IntegerGap,
}

/// Why a calibration target cannot be met.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibilityReason {
    /// The Gaussian term at full sensitivity already reaches or exceeds the
    /// target, so no threshold gap (or no noise scale under the extra-column
    /// load) can help.
    GaussianFloor,
    /// The target lies at or below the epsilon-independent floor
    /// delta_infinite, which no epsilon can cross.
    DeltaBelowInfinite,
    /// No noise scale satisfies the Gaussian term and the at-threshold floor
    /// simultaneously at this gap.
    EmptyWindow,
}

impl std::fmt::Display for InfeasibilityReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InfeasibilityReason::GaussianFloor => "gaussian_floor",
            InfeasibilityReason::DeltaBelowInfinite => "delta_below_infinite",
            InfeasibilityReason::EmptyWindow => "empty_window",
        })
    }
}

/// Result of a calibration solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CalibrationOutcome {
    Solved { value: f64 },
    Infeasible { reason: InfeasibilityReason, detail: String },
}

impl CalibrationOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            CalibrationOutcome::Solved { value } => Some(*value),
            CalibrationOutcome::Infeasible { .. } => None,
        }
    }

    pub fn is_feasible(&self) -> bool {
        matches!(self, CalibrationOutcome::Solved { .. })
    }

    fn infeasible(reason: InfeasibilityReason, detail: impl Into<String>) -> Self {
        CalibrationOutcome::Infeasible {
            reason,
            detail: detail.into(),
        }
    }
}

/// A calibration problem with exactly one free parameter.
///
/// The free parameter is the one left as `None`: `tau_high` for
/// [`min_threshold_gap`], `sigma` for the sigma solver. All other mechanism
/// parameters are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRequest {
    pub tau_low: f64,
    pub tau_high: Option<f64>,
    pub sigma: Option<f64>,
    pub c_u: u64,
    pub mu_o: f64,
    pub num_columns: u64,
    pub epsilon: f64,
    pub delta_target: f64,
    pub accounting: Accounting,
    pub gap_mode: GapMode,
}

impl CalibrationRequest {
    fn validate(&self) -> Result<()> {
        let free = [self.tau_high.is_none(), self.sigma.is_none()]
            .iter()
            .filter(|f| **f)
            .count();
        if free != 1 {
            return Err(GshmError::InvalidInput(format!(
                "exactly one of tau_high and sigma must be free (None), got {free} free"
            )));
        }
        if !(self.delta_target > 0.0 && self.delta_target < 1.0) {
            return Err(GshmError::InvalidInput(format!(
                "delta_target must lie in (0, 1), got {}",
                self.delta_target
            )));
        }
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(GshmError::InvalidInput(format!(
                "epsilon must be finite and nonnegative, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn delta_under(params: &GshmParams, epsilon: f64, accounting: Accounting) -> Result<f64> {
    match accounting {
        Accounting::Exact => Ok(accounting::exact_delta(params, epsilon)?.delta_exact),
        Accounting::AddTheDeltas => accounting::add_the_deltas(params, epsilon),
    }
}

// Number of probes in the monotonicity guard ahead of each bisection.
const GUARD_POINTS: usize = 64;

/// Finds the downward crossing of `eval` through `target` inside (lo, hi],
/// where eval(lo) > target >= eval(hi), to `abs_tol` on the argument.
///
/// Monotonicity of `eval` is not assumed: a geometric grid over the bracket
/// is checked first, and if the values are not nonincreasing the crossing is
/// searched per monotone segment and the smallest one wins.
fn first_crossing(
    eval: &dyn Fn(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    target: f64,
    abs_tol: f64,
) -> Result<f64> {
    debug_assert!(lo > 0.0 && hi > lo);
    let ratio = (hi / lo).powf(1.0 / (GUARD_POINTS as f64 - 1.0));
    let mut grid = Vec::with_capacity(GUARD_POINTS);
    let mut vals = Vec::with_capacity(GUARD_POINTS);
    for i in 0..GUARD_POINTS {
        let g = if i == GUARD_POINTS - 1 {
            hi
        } else {
            lo * ratio.powi(i as i32)
        };
        grid.push(g);
        vals.push(eval(g)?);
    }
    let monotone = vals
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-300);
    let bisect = |mut lo: f64, mut hi: f64| -> Result<f64> {
        while hi - lo > abs_tol {
            let mid = 0.5 * (lo + hi);
            if eval(mid)? <= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(hi)
    };
    if monotone {
        return bisect(lo, hi);
    }
    // Non-monotone bracket: bisect every segment that crosses downward and
    // keep the smallest crossing.
    let mut best: Option<f64> = None;
    for i in 0..GUARD_POINTS - 1 {
        if vals[i] > target && vals[i + 1] <= target {
            let x = bisect(grid[i], grid[i + 1])?;
            best = Some(best.map_or(x, |b: f64| b.min(x)));
        }
    }
    best.ok_or_else(|| {
        GshmError::InternalConsistency(
            "bracketed crossing disappeared during segment search".into(),
        )
    })
}

/// Smallest threshold gap tau_high - tau_low meeting the delta target.
///
/// The request's free field must be `tau_high`. Under sum-of-deltas
/// accounting the target is infeasible whenever the Gaussian term alone
/// reaches it (the floor term is strictly positive at every finite gap);
/// under exact accounting only a strict excess is infeasible, because the
/// exact delta attains the Gaussian term at large gaps.
pub fn min_threshold_gap(request: &CalibrationRequest) -> Result<CalibrationOutcome> {
    request.validate()?;
    if request.tau_high.is_some() {
        return Err(GshmError::InvalidInput(
            "min_threshold_gap requires tau_high to be the free field".into(),
        ));
    }
    let sigma = request.sigma.expect("validated: sigma fixed");
    let probe = |gap: f64| -> Result<GshmParams> {
        GshmParams::new(
            request.tau_low,
            request.tau_low + gap,
            sigma,
            request.c_u,
            request.mu_o,
            request.num_columns,
        )
    };
    // Gap-independent Gaussian floor at full sensitivity.
    let mu_full = accounting::mu_of_a_plus(&probe(sigma)?, request.c_u)?;
    let floor = gaussian::gaussian_delta(mu_full, request.epsilon)?;
    let target = request.delta_target;
    let infeasible = match request.accounting {
        Accounting::Exact => floor > target,
        Accounting::AddTheDeltas => floor >= target,
    };
    if infeasible {
        return Ok(CalibrationOutcome::infeasible(
            InfeasibilityReason::GaussianFloor,
            format!(
                "gaussian term {floor:e} at full sensitivity (mu = {mu_full}) \
                 already reaches the target {target:e}; no threshold gap can lower it"
            ),
        ));
    }
    let eval = |gap: f64| -> Result<f64> {
        if gap <= 0.0 {
            return Ok(2.0); // above any delta: a nonpositive gap is out of domain
        }
        delta_under(&probe(gap)?, request.epsilon, request.accounting)
    };

    // Exponential bracket around the natural scale sigma.
    let mut lo;
    let mut hi;
    if eval(sigma)? <= target {
        hi = sigma;
        lo = sigma;
        loop {
            lo *= 0.5;
            if eval(lo)? > target {
                break;
            }
            hi = lo;
            if lo < sigma * 2.0_f64.powi(-120) {
                // Every positive gap meets the target.
                return Ok(CalibrationOutcome::Solved {
                    value: match request.gap_mode {
                        GapMode::RealValued => lo,
                        GapMode::IntegerGap => 1.0,
                    },
                });
            }
        }
    } else {
        lo = sigma;
        hi = sigma;
        loop {
            hi *= 2.0;
            if eval(hi)? <= target {
                break;
            }
            lo = hi;
            if hi > sigma * 2.0_f64.powi(120) {
                return Err(GshmError::ToleranceNotReached(format!(
                    "no gap below {hi:e} reaches delta {target:e} despite a feasible floor"
                )));
            }
        }
    }

    let crossing = first_crossing(&eval, lo, hi, target, 1e-6)?;
    match request.gap_mode {
        GapMode::RealValued => Ok(CalibrationOutcome::Solved { value: crossing }),
        GapMode::IntegerGap => {
            // Snap to the smallest satisfying integer; the adjustment loops
            // absorb bisection jitter around the true crossing.
            let mut g = crossing.ceil().max(1.0);
            while eval(g)? > target {
                g += 1.0;
            }
            while g > 1.0 && eval(g - 1.0)? <= target {
                g -= 1.0;
            }
            Ok(CalibrationOutcome::Solved { value: g })
        }
    }
}

/// Smallest epsilon at which the chosen accounting's delta drops to the
/// target. The floor term is epsilon-independent, so targets at or below
/// delta_infinite are infeasible.
pub fn epsilon_for_delta(
    params: &GshmParams,
    delta_target: f64,
    accounting: Accounting,
) -> Result<CalibrationOutcome> {
    if !(delta_target > 0.0 && delta_target < 1.0) {
        return Err(GshmError::InvalidInput(format!(
            "delta_target must lie in (0, 1), got {delta_target}"
        )));
    }
    let floor = accounting::delta_infinite(params);
    if delta_target <= floor {
        return Ok(CalibrationOutcome::infeasible(
            InfeasibilityReason::DeltaBelowInfinite,
            format!(
                "target {delta_target:e} is at or below delta_infinite {floor:e}, \
                 which no epsilon can cross"
            ),
        ));
    }
    if delta_under(params, 0.0, accounting)? <= delta_target {
        return Ok(CalibrationOutcome::Solved { value: 0.0 });
    }
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while delta_under(params, hi, accounting)? > delta_target {
        lo = hi;
        hi *= 2.0;
        if hi > 1e12 {
            return Err(GshmError::ToleranceNotReached(format!(
                "no epsilon below {hi:e} reaches delta {delta_target:e} despite target above the floor"
            )));
        }
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if delta_under(params, mid, accounting)? <= delta_target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CalibrationOutcome::Solved { value: hi })
}

/// One point of a delta-comparison curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epsilon: f64,
    pub delta_exact: f64,
    pub delta_add: f64,
    /// delta_add / delta_exact; at least 1 everywhere.
    pub ratio: f64,
}

/// Evaluates both accountings over an ascending epsilon grid.
pub fn delta_curve(params: &GshmParams, epsilon_grid: &[f64]) -> Result<Vec<CurvePoint>> {
    if epsilon_grid
        .windows(2)
        .any(|w| !(w[1] >= w[0]))
    {
        return Err(GshmError::InvalidInput(
            "epsilon grid must be sorted ascending".into(),
        ));
    }
    if epsilon_grid.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(GshmError::InvalidInput(
            "epsilon grid entries must be finite and nonnegative".into(),
        ));
    }
    use rayon::prelude::*;
    epsilon_grid
        .par_iter()
        .map(|&epsilon| {
            let delta_exact = accounting::exact_delta(params, epsilon)?.delta_exact;
            let delta_add = accounting::add_the_deltas(params, epsilon)?;
            let ratio = if delta_exact > 0.0 {
                delta_add / delta_exact
            } else if delta_add == 0.0 {
                1.0
            } else {
                f64::INFINITY
            };
            Ok(CurvePoint {
                epsilon,
                delta_exact,
                delta_add,
                ratio,
            })
        })
        .collect()
}

/// Smallest noise scale meeting the delta target at a fixed threshold gap.
///
/// Any feasible sigma is at least the pure-Gaussian calibration sigma_G
/// (where the full-sensitivity Gaussian term alone equals the target), and
/// at most gap / z* (beyond which the at-threshold floor alone exceeds the
/// target). The released-column count is implied: 1 when `mu_o` is 0, else
/// the accounting depends on the extra columns only through `mu_o`.
pub fn min_sigma(
    tau_gap: f64,
    epsilon: f64,
    delta_target: f64,
    c_u: u64,
    mu_o: f64,
    accounting_kind: Accounting,
) -> Result<CalibrationOutcome> {
    if !(tau_gap > 0.0) || !tau_gap.is_finite() {
        return Err(GshmError::InvalidInput(format!(
            "tau_gap must be finite and positive, got {tau_gap}"
        )));
    }
    if !(delta_target > 0.0 && delta_target < 1.0) {
        return Err(GshmError::InvalidInput(format!(
            "delta_target must lie in (0, 1), got {delta_target}"
        )));
    }
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(GshmError::InvalidInput(format!(
            "epsilon must be finite and nonnegative, got {epsilon}"
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
    let num_columns = if mu_o == 0.0 { 1 } else { 2 };
    let cu = c_u as f64;
    // Gaussian lower bound: mu(sigma) <= mu_star requires
    // 1/sigma^2 <= mu_star^2 / c_u - mu_o^2.
    let mu_star = gaussian::calibrate_mu(epsilon, delta_target)?;
    let inv_sigma2_max = mu_star * mu_star / cu - mu_o * mu_o;
    if inv_sigma2_max <= 0.0 {
        return Ok(CalibrationOutcome::infeasible(
            InfeasibilityReason::GaussianFloor,
            format!(
                "extra columns contribute mean separation sqrt(c_u)*mu_o = {:e} \
                 which already exceeds the calibrated budget mu = {mu_star:e}",
                cu.sqrt() * mu_o
            ),
        ));
    }
    let sigma_g = inv_sigma2_max.sqrt().recip();
    // Floor upper bound: delta_infinite(sigma) <= target requires
    // gap/sigma >= z_star.
    let beta_min = ((-delta_target).ln_1p() / cu).exp();
    let sigma_cap = if beta_min <= 0.5 {
        f64::INFINITY
    } else {
        tau_gap / quantile(beta_min)
    };
    if sigma_g > sigma_cap {
        return Ok(CalibrationOutcome::infeasible(
            InfeasibilityReason::EmptyWindow,
            format!(
                "the Gaussian term needs sigma >= {sigma_g:e} but the at-threshold floor \
                 needs sigma <= {sigma_cap:e} at gap {tau_gap}"
            ),
        ));
    }
    let eval = |sigma: f64| -> Result<f64> {
        let params = GshmParams::new(0.0, tau_gap, sigma, c_u, mu_o, num_columns)?;
        delta_under(&params, epsilon, accounting_kind)
    };
    if eval(sigma_g)? <= delta_target {
        // Attained at the Gaussian bound itself; nothing below it can work.
        return Ok(CalibrationOutcome::Solved { value: sigma_g });
    }
    // Search the window for a feasible scale, then bisect back to the
    // crossing. The geometric grid doubles as the monotonicity guard.
    let hi_limit = if sigma_cap.is_finite() {
        sigma_cap
    } else {
        // No floor constraint; delta falls toward the Gaussian term as sigma
        // grows, so expand until feasible.
        let mut h = sigma_g * 2.0;
        while eval(h)? > delta_target {
            h *= 2.0;
            if h > sigma_g * 2.0_f64.powi(80) {
                return Ok(CalibrationOutcome::infeasible(
                    InfeasibilityReason::EmptyWindow,
                    format!("no feasible sigma found up to {h:e} at gap {tau_gap}"),
                ));
            }
        }
        h
    };
    let ratio = (hi_limit / sigma_g).powf(1.0 / (GUARD_POINTS as f64 - 1.0));
    let mut prev = sigma_g;
    let mut found = None;
    for i in 1..GUARD_POINTS {
        let s = if i == GUARD_POINTS - 1 {
            hi_limit
        } else {
            sigma_g * ratio.powi(i as i32)
        };
        if eval(s)? <= delta_target {
            found = Some((prev, s));
            break;
        }
        prev = s;
    }
    let Some((lo, hi)) = found else {
        return Ok(CalibrationOutcome::infeasible(
            InfeasibilityReason::EmptyWindow,
            format!(
                "no sigma in [{sigma_g:e}, {hi_limit:e}] meets delta {delta_target:e} at gap {tau_gap}"
            ),
        ));
    };
    let crossing = first_crossing(&eval, lo, hi, delta_target, 1e-9 * hi)?;
    Ok(CalibrationOutcome::Solved { value: crossing })
}
