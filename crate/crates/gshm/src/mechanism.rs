//! Executable sparse histogram release: contribution bounding, double
//! thresholding, and reproducible Gaussian noise over grouped records.
//!
//! One released row per group that passes both a deterministic count
//! threshold (tau_low, on the true count) and a noisy count threshold
//! (tau_high, on count plus N(0, sigma^2)). Optional aggregate columns get
//! independent diagonal Gaussian noise. All randomness is derived from
//! (seed, group_id), so output is identical across thread counts and input
//! orderings.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accounting::GshmParams;
use crate::normal::{cdf, quantile};
use crate::{GshmError, Result};

/// One raw input record: a user's contribution to one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub user_id: String,
    pub group_id: String,
    /// Per-column contributions to the optional aggregates; empty when only
    /// the count is released.
    pub values: Vec<f64>,
}

/// One emitted output row. Suppressed groups are simply absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseRow {
    pub group_id: String,
    pub noisy_count: f64,
    pub noisy_aggregates: Vec<f64>,
}

/// Mechanism parameters plus the noise and sensitivity of each aggregate
/// column and the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismConfig {
    pub params: GshmParams,
    pub per_column_sigma: Vec<f64>,
    pub per_column_sensitivity: Vec<f64>,
    pub seed: u64,
}

impl MechanismConfig {
    /// Checks column arity against the parameter set and that `mu_o` in the
    /// parameters equals the separation implied by the declared sensitivities.
    pub fn validate(&self) -> Result<()> {
        let extra = self.params.num_columns() - 1;
        if self.per_column_sigma.len() as u64 != extra
            || self.per_column_sensitivity.len() as u64 != extra
        {
            return Err(GshmError::InvalidInput(format!(
                "expected {extra} aggregate column(s) of sigma and sensitivity, got {} and {}",
                self.per_column_sigma.len(),
                self.per_column_sensitivity.len()
            )));
        }
        let implied = mu_from_sensitivities(&self.per_column_sensitivity, &self.per_column_sigma)?;
        let declared = self.params.mu_o();
        if (implied - declared).abs() > 1e-12 * declared.max(1.0) {
            return Err(GshmError::InvalidInput(format!(
                "params.mu_o = {declared} does not match the value {implied} implied by \
                 per-column sensitivities and sigmas"
            )));
        }
        Ok(())
    }
}

/// Mean-separation contribution of the aggregate columns:
/// sqrt(sum_j (sensitivity_j / sigma_j)^2).
pub fn mu_from_sensitivities(sensitivities: &[f64], sigmas: &[f64]) -> Result<f64> {
    if sensitivities.len() != sigmas.len() {
        return Err(GshmError::InvalidInput(format!(
            "{} sensitivities vs {} sigmas",
            sensitivities.len(),
            sigmas.len()
        )));
    }
    let mut sum = 0.0;
    for (s, sd) in sensitivities.iter().zip(sigmas) {
        if !(*sd > 0.0) || !sd.is_finite() {
            return Err(GshmError::InvalidInput(format!(
                "per-column sigma must be finite and positive, got {sd}"
            )));
        }
        if !s.is_finite() || *s < 0.0 {
            return Err(GshmError::InvalidInput(format!(
                "per-column sensitivity must be finite and nonnegative, got {s}"
            )));
        }
        sum += (s / sd) * (s / sd);
    }
    Ok(sum.sqrt())
}

/// Per-group tallies after contribution bounding.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupData {
    /// Number of distinct contributing users (each capped at 1).
    pub count: u64,
    /// Clamped per-column sums.
    pub sums: Vec<f64>,
}

/// Aggregated, structure-enforced input, keyed by group id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupedDataset {
    groups: BTreeMap<String, GroupData>,
}

impl GroupedDataset {
    pub fn groups(&self) -> &BTreeMap<String, GroupData> {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Builds a dataset directly from per-group tallies (tests, synthetic
    /// workloads). Production data should go through [`bound_contributions`].
    pub fn from_tallies(tallies: impl IntoIterator<Item = (String, GroupData)>) -> Self {
        Self {
            groups: tallies.into_iter().collect(),
        }
    }
}

/// Modification counts from [`bound_contributions`]. Nothing is dropped
/// silently: every adjustment lands in one of these counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingReport {
    /// Extra records merged into an existing (user, group) record.
    pub merged: u64,
    /// (user, group) contributions dropped because the user exceeded c_u
    /// groups.
    pub truncated: u64,
    /// Records whose merged values needed clamping to the declared bounds.
    pub clamped: u64,
    /// Malformed records rejected outright.
    pub rejected: u64,
}

impl BoundingReport {
    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }
}

/// Enforces the contribution structure the accounting assumes: at most one
/// record per (user, group), each user in at most `c_u` groups (keeping the
/// first `c_u` group ids in lexicographic order), values clamped to
/// `bounds`, duplicate records merged by summation before clamping.
pub fn bound_contributions(
    records: impl IntoIterator<Item = GroupRecord>,
    c_u: u64,
    bounds: &[f64],
) -> Result<(GroupedDataset, BoundingReport)> {
    if c_u == 0 {
        return Err(GshmError::InvalidInput("c_u must be at least 1".into()));
    }
    if bounds.iter().any(|b| !b.is_finite() || *b < 0.0) {
        return Err(GshmError::InvalidInput(
            "clamp bounds must be finite and nonnegative".into(),
        ));
    }
    let mut report = BoundingReport::default();
    // Keyed by (user, group): the BTreeMap order groups each user's entries
    // together with group ids ascending, which is exactly the retention rule.
    let mut merged: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for rec in records {
        let malformed = rec.user_id.is_empty()
            || rec.group_id.is_empty()
            || rec.values.len() != bounds.len()
            || rec.values.iter().any(|v| !v.is_finite());
        if malformed {
            report.rejected += 1;
            continue;
        }
        match merged.entry((rec.user_id, rec.group_id)) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(rec.values);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                for (acc, v) in e.get_mut().iter_mut().zip(&rec.values) {
                    *acc += v;
                }
                report.merged += 1;
            }
        }
    }

    let mut groups: BTreeMap<String, GroupData> = BTreeMap::new();
    let mut current_user: Option<String> = None;
    let mut kept_for_user = 0u64;
    for ((user, group), mut values) in merged {
        if current_user.as_deref() != Some(user.as_str()) {
            current_user = Some(user);
            kept_for_user = 0;
        }
        if kept_for_user >= c_u {
            report.truncated += 1;
            continue;
        }
        kept_for_user += 1;
        let mut was_clamped = false;
        for (v, b) in values.iter_mut().zip(bounds) {
            let c = v.clamp(-b, *b);
            if c != *v {
                was_clamped = true;
                *v = c;
            }
        }
        if was_clamped {
            report.clamped += 1;
        }
        let entry = groups.entry(group).or_insert_with(|| GroupData {
            count: 0,
            sums: vec![0.0; bounds.len()],
        });
        entry.count += 1;
        for (s, v) in entry.sums.iter_mut().zip(&values) {
            *s += v;
        }
    }
    Ok((GroupedDataset { groups }, report))
}

// Per-group generator keyed by (seed, group_id); group identity, not
// iteration order, determines the stream.
fn group_rng(seed: u64, group_id: &str) -> ChaCha12Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(group_id.as_bytes());
    ChaCha12Rng::from_seed(h.finalize().into())
}

// Inverse-CDF standard normal from the top 53 bits of one uniform draw; the
// offset keeps u strictly inside (0, 1).
fn standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0);
    quantile(u)
}

/// Runs the release over every nonempty group.
///
/// Count noise is drawn only for groups passing the deterministic threshold,
/// and aggregate noise only after both thresholds pass, so the random stream
/// per group is [count draw, aggregate draws...] when reached at all.
pub fn run_gshm(
    dataset: &GroupedDataset,
    config: &MechanismConfig,
) -> Result<BTreeMap<String, ReleaseRow>> {
    config.validate()?;
    let extra = config.per_column_sigma.len();
    for (gid, data) in &dataset.groups {
        if data.sums.len() != extra {
            return Err(GshmError::InvalidInput(format!(
                "group {gid} carries {} aggregate column(s), config expects {extra}",
                data.sums.len()
            )));
        }
    }
    let params = &config.params;
    use rayon::prelude::*;
    let rows: Vec<(String, ReleaseRow)> = dataset
        .groups
        .par_iter()
        .filter_map(|(gid, data)| {
            let count = data.count as f64;
            if count < params.tau_low() {
                return None;
            }
            let mut rng = group_rng(config.seed, gid);
            let noisy_count = count + params.sigma() * standard_normal(&mut rng);
            if noisy_count < params.tau_high() {
                return None;
            }
            let noisy_aggregates = data
                .sums
                .iter()
                .zip(&config.per_column_sigma)
                .map(|(sum, sd)| sum + sd * standard_normal(&mut rng))
                .collect();
            Some((
                gid.clone(),
                ReleaseRow {
                    group_id: gid.clone(),
                    noisy_count,
                    noisy_aggregates,
                },
            ))
        })
        .collect();
    Ok(rows.into_iter().collect())
}

/// Probability that a group with true count `count` is emitted:
/// 0 below the deterministic threshold, else the chance the noisy count
/// clears the noisy threshold.
pub fn emission_probability(count: u64, params: &GshmParams) -> f64 {
    let c = count as f64;
    if c < params.tau_low() {
        return 0.0;
    }
    // 1 - Phi((tau_high - c)/sigma), evaluated reflected to keep tail
    // precision when c is far below tau_high.
    cdf((c - params.tau_high()) / params.sigma())
}

/// Reads records from delimiter-separated text with a header row
/// `user_id,group_id,<value column names...>`. Returns the records and the
/// value column names. Structurally broken lines become records that the
/// bounding step rejects (wrong arity surfaces as a NaN-valued record), so
/// nothing is dropped silently.
pub fn read_records<R: Read>(reader: R) -> Result<(Vec<GroupRecord>, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| GshmError::Parse(format!("header row: {e}")))?;
    if headers.len() < 2 {
        return Err(GshmError::Parse(
            "header must start with user and group id columns".into(),
        ));
    }
    let value_names: Vec<String> = headers.iter().skip(2).map(str::to_owned).collect();
    let arity = value_names.len();
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| GshmError::Parse(format!("record: {e}")))?;
        if row.len() != arity + 2 {
            // Wrong field count: preserved as a rejectable record.
            records.push(GroupRecord {
                user_id: row.get(0).unwrap_or("").to_owned(),
                group_id: row.get(1).unwrap_or("").to_owned(),
                values: vec![f64::NAN; arity],
            });
            continue;
        }
        let values = row
            .iter()
            .skip(2)
            .map(|f| f.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        records.push(GroupRecord {
            user_id: row[0].to_owned(),
            group_id: row[1].to_owned(),
            values,
        });
    }
    Ok((records, value_names))
}

/// Writes emitted rows as delimiter-separated text, ascending by group id,
/// floats rendered with 17 significant digits so a reread is bit-exact.
pub fn write_release_csv<W: Write>(
    mut out: W,
    value_names: &[String],
    rows: &BTreeMap<String, ReleaseRow>,
) -> Result<()> {
    write!(out, "group_id,noisy_count")?;
    for name in value_names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for row in rows.values() {
        write!(out, "{},{:.16e}", row.group_id, row.noisy_count)?;
        for v in &row.noisy_aggregates {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// JSON variant of the release: an array of rows, ascending by group id.
pub fn write_release_json<W: Write>(out: W, rows: &BTreeMap<String, ReleaseRow>) -> Result<()> {
    let list: Vec<&ReleaseRow> = rows.values().collect();
    serde_json::to_writer_pretty(out, &list)
        .map_err(|e| GshmError::Parse(format!("serializing release: {e}")))
}
