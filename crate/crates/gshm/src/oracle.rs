//! Independent cross-checks of the accounting: Monte-Carlo estimation of the
//! privacy-loss hockey-stick on explicit worst-case neighbor pairs, and a
//! deterministic quadrature path for the single-row configuration.
//!
//! Nothing here reuses the closed-form accounting. Per-row outcome
//! probabilities and densities are written directly from the mechanism's
//! sampling procedure, so agreement with [`crate::accounting`] is evidence,
//! not tautology.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accounting::GshmParams;
use crate::normal::{cdf, log_cdf, LN_SQRT_2PI};
use crate::{GshmError, Result};

/// Neighboring pair of datasets that realizes the worst case: the removed
/// user contributes to `a_equal` rows sitting exactly at the deterministic
/// threshold and `a_plus` rows with counts far above it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCasePair {
    a_plus: u64,
    a_equal: u64,
    big_count: u64,
    params: GshmParams,
}

impl WorstCasePair {
    /// Builds a pair with the default large-row count `tau + ceil(20 sigma)`,
    /// far enough above the noisy threshold in every sane configuration that
    /// truncation mass is negligible against Monte-Carlo error.
    pub fn new(a_plus: u64, a_equal: u64, params: GshmParams) -> Result<Self> {
        let big = params.tau_low().ceil() as u64 + (20.0 * params.sigma()).ceil() as u64;
        Self::with_big_count(a_plus, a_equal, big, params)
    }

    pub fn with_big_count(
        a_plus: u64,
        a_equal: u64,
        big_count: u64,
        params: GshmParams,
    ) -> Result<Self> {
        if a_plus + a_equal > params.c_u() {
            return Err(GshmError::InvalidInput(format!(
                "a_plus + a_equal = {} exceeds c_u = {}",
                a_plus + a_equal,
                params.c_u()
            )));
        }
        if a_equal > 0 && params.tau_low() < 1.0 {
            return Err(GshmError::InvalidInput(
                "threshold rows need tau_low >= 1 so the neighbor count stays nonnegative".into(),
            ));
        }
        if a_plus > 0 && big_count < 1 {
            return Err(GshmError::InvalidInput(
                "large rows need big_count >= 1".into(),
            ));
        }
        Ok(Self {
            a_plus,
            a_equal,
            big_count,
            params,
        })
    }

    pub fn a_plus(&self) -> u64 {
        self.a_plus
    }

    pub fn a_equal(&self) -> u64 {
        self.a_equal
    }

    pub fn big_count(&self) -> u64 {
        self.big_count
    }

    pub fn params(&self) -> &GshmParams {
        &self.params
    }

    // Counts (under X, under the neighbor with one user removed) for every
    // row the removed user touches.
    fn rows(&self) -> Vec<(u64, u64)> {
        let tau_count = self.params.tau_low().ceil() as u64;
        let mut rows = Vec::with_capacity((self.a_equal + self.a_plus) as usize);
        rows.extend((0..self.a_equal).map(|_| (tau_count, tau_count - 1)));
        rows.extend((0..self.a_plus).map(|_| (self.big_count, self.big_count - 1)));
        rows
    }
}

/// Monte-Carlo estimate of both hockey-stick expressions at one epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlrvEstimate {
    pub epsilon: f64,
    /// Divergence of the larger dataset against the neighbor.
    pub delta_forward: f64,
    pub forward_stderr: f64,
    /// Divergence of the neighbor against the larger dataset.
    pub delta_reverse: f64,
    pub reverse_stderr: f64,
    pub samples: u64,
}

impl PlrvEstimate {
    /// True values lie in [0, 1]; estimates may only dip below zero by
    /// sampling noise.
    pub fn is_plausible(&self) -> bool {
        self.delta_forward >= -3.0 * self.forward_stderr
            && self.delta_forward <= 1.0
            && self.delta_reverse >= -3.0 * self.reverse_stderr
            && self.delta_reverse <= 1.0
    }
}

/// Output of the single-row mechanism for one group: suppressed, or emitted
/// with the noisy count plus (when aggregate columns exist) the value of the
/// synthetic unit-variance aggregate column that carries the whole
/// mean-separation `mu_o`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowOutcome {
    Suppressed,
    Emitted { count: f64, aggregate: f64 },
}

/// Log-likelihood ratio of one row's outcome between counts `c_x` (the
/// distribution the outcome was drawn from) and `c_x_prime`; +inf when the
/// outcome is impossible under the second count.
///
/// Suppression happens with probability 1 below the deterministic threshold
/// and Phi((tau_high - c)/sigma) otherwise; an emitted count keeps the plain
/// Gaussian density, so the ratio is a density difference. The aggregate
/// column has mean `mu_o` under whichever side holds the extra user (the
/// larger count) and mean 0 under the other.
pub fn row_log_likelihood_ratio(
    outcome: RowOutcome,
    c_x: u64,
    c_x_prime: u64,
    params: &GshmParams,
) -> Result<f64> {
    if c_x == c_x_prime {
        // Identical distributions, identical likelihoods.
        return Ok(0.0);
    }
    let tau = params.tau_low();
    let tau_star = params.tau_high();
    let sigma = params.sigma();
    let log_suppress = |c: u64| -> f64 {
        let c = c as f64;
        if c < tau {
            0.0
        } else {
            log_cdf((tau_star - c) / sigma)
        }
    };
    match outcome {
        RowOutcome::Suppressed => Ok(log_suppress(c_x) - log_suppress(c_x_prime)),
        RowOutcome::Emitted { count, aggregate } => {
            if count < tau_star {
                return Err(GshmError::InternalConsistency(format!(
                    "emitted count {count} below the noisy threshold {tau_star}"
                )));
            }
            if (c_x as f64) < tau {
                return Err(GshmError::InternalConsistency(format!(
                    "emitted outcome for a row whose count {c_x} cannot pass the \
                     deterministic threshold {tau}"
                )));
            }
            if (c_x_prime as f64) < tau {
                // Emission is impossible under the neighbor.
                return Ok(f64::INFINITY);
            }
            let dx = (count - c_x as f64) / sigma;
            let dy = (count - c_x_prime as f64) / sigma;
            let count_part = 0.5 * (dy * dy - dx * dx);
            let mu_o = params.mu_o();
            let aggregate_part = if mu_o > 0.0 {
                let toward_x = mu_o * aggregate - 0.5 * mu_o * mu_o;
                if c_x > c_x_prime {
                    toward_x
                } else {
                    -toward_x
                }
            } else {
                0.0
            };
            Ok(count_part + aggregate_part)
        }
    }
}

// Draws one row outcome for a group with count `c_sample`, where `c_other`
// is the same row's count on the other side of the pair; the larger side
// carries the aggregate mean shift.
fn sample_row(
    rng: &mut ChaCha12Rng,
    c_sample: u64,
    c_other: u64,
    params: &GshmParams,
) -> RowOutcome {
    let c = c_sample as f64;
    if c < params.tau_low() {
        return RowOutcome::Suppressed;
    }
    let z: f64 = StandardNormal.sample(rng);
    let noisy = c + params.sigma() * z;
    if noisy < params.tau_high() {
        return RowOutcome::Suppressed;
    }
    let mu_o = params.mu_o();
    let aggregate = if mu_o > 0.0 {
        let w: f64 = StandardNormal.sample(rng);
        if c_sample > c_other {
            mu_o + w
        } else {
            w
        }
    } else {
        0.0
    };
    RowOutcome::Emitted {
        count: noisy,
        aggregate,
    }
}

fn block_rng(seed: u64, block: u64) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(b"plrv-block");
    h.update(block.to_le_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

const BLOCK_SAMPLES: u64 = 1 << 14;

/// Estimates both hockey-stick expressions at `epsilon` by sampling
/// full-pair outcomes (rows are independent) and summing per-row log-ratios.
/// Infinite losses count toward the upper-tail events with weight 1.
/// Sampling is block-parallel with per-block derived seeds; the result
/// depends only on (pair, epsilon, samples, seed).
pub fn estimate_hockey_stick(
    pair: &WorstCasePair,
    epsilon: f64,
    samples: u64,
    seed: u64,
) -> Result<PlrvEstimate> {
    if samples == 0 {
        return Err(GshmError::InvalidInput("samples must be positive".into()));
    }
    if !epsilon.is_finite() {
        return Err(GshmError::InvalidInput(format!(
            "epsilon must be finite, got {epsilon}"
        )));
    }
    let rows = pair.rows();
    let params = &pair.params;
    let blocks = samples.div_ceil(BLOCK_SAMPLES);
    // counts[0]: forward loss >= eps (draws from X)
    // counts[1]: reverse-view loss <= -eps (draws from the neighbor)
    // counts[2]: reverse-view loss >= eps
    // counts[3]: forward loss <= -eps
    let counts: [u64; 4] = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<[u64; 4]> {
            let mut rng = block_rng(seed, b);
            let lo = b * BLOCK_SAMPLES;
            let hi = ((b + 1) * BLOCK_SAMPLES).min(samples);
            let mut c = [0u64; 4];
            for _ in lo..hi {
                let mut loss_x = 0.0_f64;
                let mut loss_y = 0.0_f64;
                for &(cx, cy) in &rows {
                    let ox = sample_row(&mut rng, cx, cy, params);
                    loss_x += row_log_likelihood_ratio(ox, cx, cy, params)?;
                    let oy = sample_row(&mut rng, cy, cx, params);
                    loss_y += row_log_likelihood_ratio(oy, cy, cx, params)?;
                }
                if loss_x >= epsilon {
                    c[0] += 1;
                }
                if loss_y <= -epsilon {
                    c[1] += 1;
                }
                if loss_y >= epsilon {
                    c[2] += 1;
                }
                if loss_x <= -epsilon {
                    c[3] += 1;
                }
            }
            Ok(c)
        })
        .try_reduce(
            || [0u64; 4],
            |a, b| Ok([a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]),
        )?;
    let n = samples as f64;
    let p: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let var = |q: f64| q * (1.0 - q) / n;
    // Guard the c == 0 case so absurdly large epsilon cannot produce inf * 0.
    let scaled = |c: u64, q: f64| if c == 0 { 0.0 } else { epsilon.exp() * q };
    let scaled_var = |c: u64, q: f64| {
        if c == 0 {
            0.0
        } else {
            (2.0 * epsilon).exp() * var(q)
        }
    };
    Ok(PlrvEstimate {
        epsilon,
        delta_forward: p[0] - scaled(counts[1], p[1]),
        forward_stderr: (var(p[0]) + scaled_var(counts[1], p[1])).sqrt(),
        delta_reverse: p[2] - scaled(counts[3], p[3]),
        reverse_stderr: (var(p[2]) + scaled_var(counts[3], p[3])).sqrt(),
        samples,
    })
}

/// Estimates Pr(loss >= threshold) for the pair's loss sampled under the
/// larger dataset, with its binomial standard error. Infinite losses count
/// with weight 1. Same block/seed scheme as [`estimate_hockey_stick`], so
/// probes at different thresholds under one seed see identical draws and
/// their counts are exactly comparable.
pub fn forward_loss_tail(
    pair: &WorstCasePair,
    threshold: f64,
    samples: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(GshmError::InvalidInput("samples must be positive".into()));
    }
    let rows = pair.rows();
    let params = &pair.params;
    let blocks = samples.div_ceil(BLOCK_SAMPLES);
    let hits: u64 = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<u64> {
            let mut rng = block_rng(seed, b);
            let lo = b * BLOCK_SAMPLES;
            let hi = ((b + 1) * BLOCK_SAMPLES).min(samples);
            let mut c = 0u64;
            for _ in lo..hi {
                let mut loss = 0.0_f64;
                for &(cx, cy) in &rows {
                    let outcome = sample_row(&mut rng, cx, cy, params);
                    loss += row_log_likelihood_ratio(outcome, cx, cy, params)?;
                }
                if loss >= threshold {
                    c += 1;
                }
            }
            Ok(c)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let n = samples as f64;
    let p = hits as f64 / n;
    Ok((p, (p * (1.0 - p) / n).sqrt()))
}

/// Which hockey-stick expression to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Larger dataset against the neighbor.
    Forward,
    /// Neighbor against the larger dataset.
    Reverse,
}

/// Deterministic evaluation of one hockey-stick expression for a single
/// large row (`a_plus = 1`, `a_equal = 0`, count column only) by adaptive
/// quadrature of the explicit output density: a point mass at suppression
/// plus a Gaussian restricted to `[tau_high, inf)`.
///
/// Absolute tolerance 1e-10 on the result for moderate epsilon; failure to
/// converge is an explicit error, never a silent fallback.
pub fn quadrature_delta_single_row(
    pair: &WorstCasePair,
    epsilon: f64,
    direction: Direction,
) -> Result<f64> {
    if pair.a_plus != 1 || pair.a_equal != 0 {
        return Err(GshmError::InvalidInput(format!(
            "quadrature handles exactly one large row, got a_plus = {}, a_equal = {}",
            pair.a_plus, pair.a_equal
        )));
    }
    let params = &pair.params;
    if params.num_columns() != 1 {
        return Err(GshmError::InvalidInput(
            "quadrature handles the count column only".into(),
        ));
    }
    if !epsilon.is_finite() {
        return Err(GshmError::InvalidInput(format!(
            "epsilon must be finite, got {epsilon}"
        )));
    }
    let b = pair.big_count as f64;
    let b_alt = b - 1.0;
    if b_alt < params.tau_low() {
        return Err(GshmError::InvalidInput(
            "big_count - 1 must still pass the deterministic threshold".into(),
        ));
    }
    let sigma = params.sigma();
    let tau_star = params.tau_high();
    let s2 = sigma * sigma;

    // Loss of an emitted count c is (c - b + 1/2) / sigma^2, increasing in c.
    let c_upper = b - 0.5 + s2 * epsilon; // loss >= eps  <=>  c >= c_upper
    let c_lower = b - 0.5 - s2 * epsilon; // loss <= -eps <=>  c <= c_lower
    let atom_x = cdf((tau_star - b) / sigma);
    let atom_y = cdf((tau_star - b_alt) / sigma);
    let loss_empty = log_cdf((tau_star - b) / sigma) - log_cdf((tau_star - b_alt) / sigma);

    let tol = 2.5e-11 / epsilon.exp().max(1.0);
    let density_tail = |mean: f64, lo: f64, hi: f64| -> Result<f64> {
        let lo = lo.max(mean - 40.0 * sigma);
        let hi = hi.min(mean + 40.0 * sigma);
        if lo >= hi {
            return Ok(0.0);
        }
        let dens = |c: f64| {
            let t = (c - mean) / sigma;
            (-0.5 * t * t - LN_SQRT_2PI).exp() / sigma
        };
        // Split at the mode so a peak interior to a long interval cannot be
        // missed by the first coarse estimate.
        if lo < mean && mean < hi {
            Ok(adaptive_simpson(&dens, lo, mean, 0.5 * tol)?
                + adaptive_simpson(&dens, mean, hi, 0.5 * tol)?)
        } else {
            adaptive_simpson(&dens, lo, hi, tol)
        }
    };

    // Pr over emitted outcomes with loss >= eps, under each side.
    let upper_from = c_upper.max(tau_star);
    let ge_x = density_tail(b, upper_from, f64::INFINITY)?
        + if loss_empty >= epsilon { atom_x } else { 0.0 };
    let ge_y = density_tail(b_alt, upper_from, f64::INFINITY)?
        + if loss_empty >= epsilon { atom_y } else { 0.0 };
    // Pr over emitted outcomes with loss <= -eps, under each side.
    let le_x = density_tail(b, tau_star, c_lower)?
        + if loss_empty <= -epsilon { atom_x } else { 0.0 };
    let le_y = density_tail(b_alt, tau_star, c_lower)?
        + if loss_empty <= -epsilon { atom_y } else { 0.0 };

    let value = match direction {
        Direction::Forward => ge_x - epsilon.exp() * ge_y,
        Direction::Reverse => le_y - epsilon.exp() * le_x,
    };
    Ok(value)
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(b > a) {
        return Ok(0.0);
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 52)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if err.abs() <= 15.0 * tol {
        return Ok(left + right + err / 15.0);
    }
    if depth == 0 {
        return Err(GshmError::ToleranceNotReached(format!(
            "quadrature failed to reach tolerance {tol:e} on [{a}, {b}]"
        )));
    }
    Ok(
        simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::gaussian_delta;

    fn params(tau: f64, gap: f64, sigma: f64, c_u: u64) -> GshmParams {
        GshmParams::new(tau, tau + gap, sigma, c_u, 0.0, 1).unwrap()
    }

    fn check(e: &PlrvEstimate) {
        assert!(e.is_plausible(), "implausible estimate: {e:?}");
    }

    #[test]
    fn llr_zero_for_identical_counts() {
        let p = params(5.0, 8.0, 4.0, 3);
        for outcome in [
            RowOutcome::Suppressed,
            RowOutcome::Emitted {
                count: 14.0,
                aggregate: 0.3,
            },
        ] {
            assert_eq!(row_log_likelihood_ratio(outcome, 7, 7, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn llr_threshold_row_cases() {
        let p = params(5.0, 8.0, 4.0, 3);
        // Emission at count tau is impossible for the neighbor at tau - 1.
        let emitted = RowOutcome::Emitted {
            count: 13.5,
            aggregate: 0.0,
        };
        assert_eq!(
            row_log_likelihood_ratio(emitted, 5, 4, &p).unwrap(),
            f64::INFINITY
        );
        // Suppression ratio collapses to the one-sided log-probability.
        let got = row_log_likelihood_ratio(RowOutcome::Suppressed, 5, 4, &p).unwrap();
        assert_eq!(got, log_cdf(8.0 / 4.0));
    }

    #[test]
    fn llr_emitted_density_difference() {
        let p = params(5.0, 8.0, 4.0, 3);
        let c = 14.25;
        let got = row_log_likelihood_ratio(
            RowOutcome::Emitted {
                count: c,
                aggregate: 0.0,
            },
            60,
            59,
            &p,
        )
        .unwrap();
        // Unit count difference: (c - C + 1/2) / sigma^2.
        let want = (c - 60.0 + 0.5) / 16.0;
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }

    #[test]
    fn llr_rejects_sub_threshold_emission() {
        let p = params(5.0, 8.0, 4.0, 3);
        let bad = RowOutcome::Emitted {
            count: 12.9,
            aggregate: 0.0,
        };
        assert!(matches!(
            row_log_likelihood_ratio(bad, 60, 59, &p),
            Err(GshmError::InternalConsistency(_))
        ));
    }

    #[test]
    fn llr_aggregate_contribution_and_sign() {
        let p = GshmParams::new(5.0, 13.0, 4.0, 3, 0.5, 2).unwrap();
        let outcome = RowOutcome::Emitted {
            count: 14.0,
            aggregate: 1.2,
        };
        let fwd = row_log_likelihood_ratio(outcome, 60, 59, &p).unwrap();
        let count_part = (14.0 - 60.0 + 0.5) / 16.0;
        let agg = 0.5 * 1.2 - 0.5 * 0.25;
        assert!((fwd - (count_part + agg)).abs() < 1e-15);
        // Swapping the counts inverts the ratio, so the log negates.
        let rev = row_log_likelihood_ratio(outcome, 59, 60, &p).unwrap();
        assert!((rev + fwd).abs() < 1e-15, "{rev} vs {}", -fwd);
    }

    #[test]
    fn estimator_is_deterministic_per_seed() {
        let pair = WorstCasePair::new(1, 1, params(5.0, 6.0, 3.0, 2)).unwrap();
        let a = estimate_hockey_stick(&pair, 0.4, 50_000, 11).unwrap();
        let b = estimate_hockey_stick(&pair, 0.4, 50_000, 11).unwrap();
        assert_eq!(a, b);
        let c = estimate_hockey_stick(&pair, 0.4, 50_000, 12).unwrap();
        assert_ne!(a.delta_forward, c.delta_forward);
    }

    #[test]
    fn threshold_row_forward_mass_is_emission_probability() {
        // One row at the deterministic threshold: the loss is +inf exactly
        // when the row emits, so the forward estimate at any positive
        // epsilon is the emission probability 1 - Phi(gap/sigma).
        let p = params(5.0, 3.0, 3.0, 1);
        let pair = WorstCasePair::new(0, 1, p).unwrap();
        let n = 400_000;
        let est = estimate_hockey_stick(&pair, 0.7, n, 17).unwrap();
        check(&est);
        let want = 1.0 - cdf(1.0);
        assert!(
            (est.delta_forward - want).abs() <= 4.0 * est.forward_stderr,
            "{} vs {want} +- {}",
            est.delta_forward,
            est.forward_stderr
        );
        // The neighbor never emits that row, so the reverse tail is empty.
        assert_eq!(est.delta_reverse, 0.0);
    }

    #[test]
    fn large_row_pair_behaves_like_the_plain_gaussian() {
        let p = params(5.0, 6.0, 2.0, 1);
        let pair = WorstCasePair::new(1, 0, p).unwrap();
        let eps = 0.3;
        let want = gaussian_delta(0.5, eps).unwrap();
        let est = estimate_hockey_stick(&pair, eps, 400_000, 23).unwrap();
        check(&est);
        assert!(
            (est.delta_forward - want).abs() <= 4.0 * est.forward_stderr,
            "forward {} vs {want} +- {}",
            est.delta_forward,
            est.forward_stderr
        );
        assert!(
            (est.delta_reverse - want).abs() <= 4.0 * est.reverse_stderr,
            "reverse {} vs {want} +- {}",
            est.delta_reverse,
            est.reverse_stderr
        );
    }

    #[test]
    fn quadrature_matches_gaussian_in_large_count_limit() {
        let p = params(5.0, 6.0, 2.0, 1);
        let pair =
            WorstCasePair::with_big_count(1, 0, 5 + (30.0 * 2.0) as u64 + 11, p.clone()).unwrap();
        for eps in [-0.5, 0.0, 0.2, 1.0] {
            let want = gaussian_delta(0.5, eps).unwrap();
            for dir in [Direction::Forward, Direction::Reverse] {
                let got = quadrature_delta_single_row(&pair, eps, dir).unwrap();
                assert!(
                    (got - want).abs() < 1e-8,
                    "eps {eps} {dir:?}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn quadrature_never_exceeds_the_gaussian_value() {
        for sigma in [1.5, 3.0, 8.0] {
            for gap in [1.0, 4.0, 12.0] {
                let p = params(5.0, gap, sigma, 1);
                for extra in [1.0, 3.0, 10.0] {
                    let big = (5.0 + gap + extra * sigma).ceil() as u64;
                    let pair = WorstCasePair::with_big_count(1, 0, big, p.clone()).unwrap();
                    for eps in [-0.8, -0.2, 0.0, 0.3, 1.1] {
                        let cap = gaussian_delta(1.0 / sigma, eps).unwrap();
                        for dir in [Direction::Forward, Direction::Reverse] {
                            let got = quadrature_delta_single_row(&pair, eps, dir).unwrap();
                            assert!(
                                got <= cap + 1e-9,
                                "sigma {sigma} gap {gap} big {big} eps {eps} {dir:?}: \
                                 {got} > {cap}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn quadrature_tightens_toward_gaussian_as_count_grows() {
        let sigma = 3.0;
        let p = params(5.0, 4.0, sigma, 1);
        let tau_star = 9.0;
        for dir in [Direction::Forward, Direction::Reverse] {
            let mut last = -1.0;
            for k in 1..=30 {
                let big = (tau_star + k as f64 * sigma).ceil() as u64;
                let pair = WorstCasePair::with_big_count(1, 0, big, p.clone()).unwrap();
                let v = quadrature_delta_single_row(&pair, 0.25, dir).unwrap();
                assert!(
                    v >= last - 2e-10,
                    "{dir:?} not monotone at k = {k}: {v} < {last}"
                );
                last = v;
            }
            let cap = gaussian_delta(1.0 / sigma, 0.25).unwrap();
            assert!((last - cap).abs() < 1e-6, "{dir:?} limit {last} vs {cap}");
        }
    }

    #[test]
    fn quadrature_agrees_with_the_sampler() {
        let p = params(5.0, 4.0, 3.0, 1);
        let pair = WorstCasePair::with_big_count(1, 0, 14, p).unwrap();
        let eps = 0.35;
        let est = estimate_hockey_stick(&pair, eps, 400_000, 31).unwrap();
        check(&est);
        let qf = quadrature_delta_single_row(&pair, eps, Direction::Forward).unwrap();
        let qr = quadrature_delta_single_row(&pair, eps, Direction::Reverse).unwrap();
        assert!(
            (est.delta_forward - qf).abs() <= 4.0 * est.forward_stderr,
            "forward {} vs {qf}",
            est.delta_forward
        );
        assert!(
            (est.delta_reverse - qr).abs() <= 4.0 * est.reverse_stderr,
            "reverse {} vs {qr}",
            est.delta_reverse
        );
    }

    #[test]
    fn threshold_loss_has_exactly_two_support_points() {
        // For a_plus = 0 the loss under X is a_equal * log(beta) when all
        // rows suppress and +inf otherwise. Three threshold probes with one
        // seed see the same draws, so the counts must agree exactly.
        let p = params(5.0, 3.0, 3.0, 2);
        let pair = WorstCasePair::new(0, 2, p).unwrap();
        let beta = cdf(1.0);
        let atom = 2.0 * beta.ln();
        let n = 300_000;
        let (below, _) = forward_loss_tail(&pair, atom - 1e-9, n, 41).unwrap();
        let (above, se) = forward_loss_tail(&pair, atom + 1e-9, n, 41).unwrap();
        let (far, _) = forward_loss_tail(&pair, 400.0, n, 41).unwrap();
        assert_eq!(below, 1.0, "all mass sits at or above the finite atom");
        assert_eq!(above, far, "no support between the atom and +inf");
        let want = 1.0 - beta * beta;
        assert!((above - want).abs() <= 4.0 * se, "{above} vs {want}");
    }

    #[test]
    fn mixed_pair_directions_match_the_scan_terms() {
        // a_plus = 1, a_equal = 1: the estimator's directions are exactly
        // the two variable terms the exact scan evaluates at one threshold
        // row, reconstructed here from the shifted epsilons.
        let p = params(5.0, 4.0, 3.0, 2);
        let eps = 0.2;
        let beta = cdf(4.0 / 3.0);
        let mu1 = crate::accounting::mu_of_a_plus(&p, 1).unwrap();
        let (e_mixed, e_swapped) = crate::accounting::shifted_epsilons(&p, eps, 1);
        let mixed = 1.0 - beta + beta * gaussian_delta(mu1, e_mixed).unwrap();
        let swapped = gaussian_delta(mu1, e_swapped).unwrap();
        let pair = WorstCasePair::new(1, 1, p).unwrap();
        let est = estimate_hockey_stick(&pair, eps, 600_000, 47).unwrap();
        check(&est);
        assert!(
            (est.delta_forward - mixed).abs() <= 4.0 * est.forward_stderr,
            "forward {} vs mixed term {mixed}",
            est.delta_forward
        );
        assert!(
            (est.delta_reverse - swapped).abs() <= 4.0 * est.reverse_stderr,
            "reverse {} vs swapped term {swapped}",
            est.delta_reverse
        );
    }

    #[test]
    fn full_pair_at_binding_row_split_reproduces_exact_delta() {
        // When the scan's argmax sits at zero threshold rows, both
        // directions of the (a_plus = c_u, a_equal = 0) pair estimate the
        // exact delta itself.
        let p = params(5.0, 18.0, 3.0, 2);
        let eps = 0.25;
        let report = crate::accounting::exact_delta(&p, eps).unwrap();
        assert_eq!(report.argmax_a_equal, 0, "configuration must bind at zero");
        let pair = WorstCasePair::new(2, 0, p).unwrap();
        let est = estimate_hockey_stick(&pair, eps, 400_000, 53).unwrap();
        check(&est);
        for (got, se) in [
            (est.delta_forward, est.forward_stderr),
            (est.delta_reverse, est.reverse_stderr),
        ] {
            assert!(
                (got - report.delta_exact).abs() <= 4.0 * se,
                "{got} vs exact {}",
                report.delta_exact
            );
        }
    }

    #[test]
    fn pair_validation() {
        let p = params(5.0, 4.0, 3.0, 2);
        assert!(WorstCasePair::new(2, 1, p.clone()).is_err());
        assert!(WorstCasePair::with_big_count(1, 0, 0, p.clone()).is_err());
        let low = GshmParams::new(0.5, 4.0, 3.0, 2, 0.0, 1).unwrap();
        assert!(WorstCasePair::new(0, 1, low).is_err());
        let pair = WorstCasePair::new(1, 1, p).unwrap();
        assert_eq!(pair.big_count(), 5 + 60);
    }

    #[test]
    fn quadrature_rejects_unsupported_shapes() {
        let p = params(5.0, 4.0, 3.0, 2);
        let pair = WorstCasePair::new(1, 1, p.clone()).unwrap();
        assert!(quadrature_delta_single_row(&pair, 0.1, Direction::Forward).is_err());
        let multi = GshmParams::new(5.0, 9.0, 3.0, 2, 0.5, 2).unwrap();
        let pair = WorstCasePair::new(1, 0, multi).unwrap();
        assert!(quadrature_delta_single_row(&pair, 0.1, Direction::Forward).is_err());
    }
}
