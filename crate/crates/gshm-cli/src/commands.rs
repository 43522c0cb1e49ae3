//! The six subcommands. Each is a thin adapter: resolve flags against the
//! optional config file, call the library, render. No numeric logic lives
//! here beyond composing library results.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use gshm::accounting::{self, AccountingReport, GshmParams};
use gshm::calibrate::{
    self, Accounting, CalibrationOutcome, CalibrationRequest, GapMode, InfeasibilityReason,
};
use gshm::gaussian;
use gshm::mechanism::{self, BoundingReport, MechanismConfig};
use gshm::normal::std_normal_cdf;
use gshm::oracle::{self, Direction, PlrvEstimate, WorstCasePair};

use crate::config::{req, FileCfg};
use crate::output::{
    full, open_output, render_csv, render_json, render_table, sig6, Format, TABLE_FOOTNOTE,
};
use crate::{CliError, CliResult};

#[derive(Args, Debug)]
pub(crate) struct CommonOpts {
    /// JSON file providing defaults for any flag, under the long flag name.
    #[arg(long, value_name = "PATH")]
    pub(crate) config: Option<PathBuf>,
    /// Output format: table, csv, or json.
    #[arg(long, value_enum)]
    pub(crate) format: Option<Format>,
    /// Write output to this file instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub(crate) output: Option<PathBuf>,
}

impl CommonOpts {
    fn format(&self, cfg: &FileCfg, default: Format) -> CliResult<Format> {
        if let Some(f) = self.format {
            return Ok(f);
        }
        match cfg.string("format")? {
            Some(name) => Format::parse_name(&name),
            None => Ok(default),
        }
    }

    fn output_path(&self, cfg: &FileCfg) -> CliResult<Option<PathBuf>> {
        Ok(match &self.output {
            Some(p) => Some(p.clone()),
            None => cfg.string("output")?.map(PathBuf::from),
        })
    }
}

#[derive(Args, Debug)]
pub(crate) struct ParamOpts {
    /// Deterministic count threshold.
    #[arg(long)]
    pub(crate) tau: Option<f64>,
    /// Noisy count threshold.
    #[arg(long = "tau-star")]
    pub(crate) tau_star: Option<f64>,
    /// Count noise standard deviation.
    #[arg(long)]
    pub(crate) sigma: Option<f64>,
    /// Maximum number of groups one user may contribute to.
    #[arg(long)]
    pub(crate) cu: Option<u64>,
    /// Mean separation contributed by aggregate columns (0 = counts only).
    #[arg(long = "mu-o")]
    pub(crate) mu_o: Option<f64>,
}

// Shared resolution of the full parameter set. The released-column count is
// implied by mu_o: the accounting depends on extra columns only through it.
fn resolve_params(p: &ParamOpts, cfg: &FileCfg) -> CliResult<GshmParams> {
    let tau = req(p.tau.or(cfg.f64("tau")?), "tau")?;
    let tau_star = req(p.tau_star.or(cfg.f64("tau-star")?), "tau-star")?;
    let sigma = req(p.sigma.or(cfg.f64("sigma")?), "sigma")?;
    let cu = req(p.cu.or(cfg.u64("cu")?), "cu")?;
    let mu_o = p.mu_o.or(cfg.f64("mu-o")?).unwrap_or(0.0);
    let columns = if mu_o > 0.0 { 2 } else { 1 };
    Ok(GshmParams::new(tau, tau_star, sigma, cu, mu_o, columns)?)
}

fn mu_full(params: &GshmParams) -> CliResult<f64> {
    Ok(accounting::mu_of_a_plus(params, params.c_u())?)
}

// ---------------------------------------------------------------- delta --

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub(crate) enum AccountingChoice {
    Exact,
    Add,
    Gaussian,
    All,
}

#[derive(Args, Debug)]
pub(crate) struct DeltaArgs {
    #[command(flatten)]
    pub(crate) params: ParamOpts,
    /// Privacy parameter epsilon.
    #[arg(long)]
    pub(crate) epsilon: Option<f64>,
    /// Which accounting to evaluate.
    #[arg(long, value_enum)]
    pub(crate) accounting: Option<AccountingChoice>,
    #[command(flatten)]
    pub(crate) common: CommonOpts,
}

#[derive(Serialize)]
struct DeltaRow {
    accounting: &'static str,
    epsilon: f64,
    delta: f64,
    delta_infinite: f64,
    delta_gaussian: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    binding_term: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    argmax_a_equal: Option<u64>,
}

pub(crate) fn cmd_delta(args: &DeltaArgs) -> CliResult<()> {
    let cfg = FileCfg::load(args.common.config.as_deref())?;
    let params = resolve_params(&args.params, &cfg)?;
    let epsilon = req(args.epsilon.or(cfg.f64("epsilon")?), "epsilon")?;
    let choice = match args.accounting {
        Some(c) => c,
        None => match cfg.string("accounting")?.as_deref() {
            Some("exact") => AccountingChoice::Exact,
            Some("add") => AccountingChoice::Add,
            Some("gaussian") => AccountingChoice::Gaussian,
            Some("all") | None => AccountingChoice::All,
            Some(other) => {
                return Err(CliError::Usage(format!(
                    "unknown accounting {other:?}; expected exact, add, gaussian, or all"
                )))
            }
        },
    };

    let mut rows = Vec::new();
    let wants = |c: AccountingChoice| choice == c || choice == AccountingChoice::All;
    if wants(AccountingChoice::Exact) {
        let report = accounting::exact_delta(&params, epsilon)?;
        rows.push(DeltaRow {
            accounting: "exact",
            epsilon,
            delta: report.delta_exact,
            delta_infinite: report.delta_infinite,
            delta_gaussian: report.delta_gaussian,
            binding_term: Some(report.binding_term.to_string()),
            argmax_a_equal: Some(report.argmax_a_equal),
        });
    }
    if wants(AccountingChoice::Add) {
        let delta = accounting::add_the_deltas(&params, epsilon)?;
        rows.push(DeltaRow {
            accounting: "add-the-deltas",
            epsilon,
            delta,
            delta_infinite: accounting::delta_infinite(&params),
            delta_gaussian: gaussian::gaussian_delta(mu_full(&params)?, epsilon)?,
            binding_term: None,
            argmax_a_equal: None,
        });
    }
    if wants(AccountingChoice::Gaussian) {
        let delta = gaussian::gaussian_delta(mu_full(&params)?, epsilon)?;
        rows.push(DeltaRow {
            accounting: "gaussian",
            epsilon,
            delta,
            delta_infinite: 0.0,
            delta_gaussian: delta,
            binding_term: None,
            argmax_a_equal: None,
        });
    }

    let format = args.common.format(&cfg, Format::Table)?;
    let mut out = open_output(args.common.output_path(&cfg)?.as_deref())?;
    let headers = [
        "accounting",
        "epsilon",
        "delta",
        "delta_infinite",
        "delta_gaussian",
        "binding_term",
        "argmax_a_equal",
    ];
    let cells = |r: &DeltaRow, num: fn(f64) -> String| {
        vec![
            r.accounting.to_string(),
            num(r.epsilon),
            num(r.delta),
            num(r.delta_infinite),
            num(r.delta_gaussian),
            r.binding_term.clone().unwrap_or_default(),
            r.argmax_a_equal.map(|a| a.to_string()).unwrap_or_default(),
        ]
    };
    match format {
        Format::Table => {
            let body: Vec<Vec<String>> = rows.iter().map(|r| cells(r, sig6)).collect();
            render_table(&mut out, &headers, &body).map_err(|e| CliError::Io(e.to_string()))?;
            writeln!(out, "{TABLE_FOOTNOTE}").map_err(|e| CliError::Io(e.to_string()))?;
        }
        Format::Csv => {
            let body: Vec<Vec<String>> = rows.iter().map(|r| cells(r, full)).collect();
            render_csv(&mut out, &headers, &body).map_err(|e| CliError::Io(e.to_string()))?;
        }
        Format::Json => render_json(&mut out, &rows)?,
    }
    Ok(())
}

// ------------------------------------------------------------ calibrate --

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub(crate) enum SolveTarget {
    TauStar,
    Sigma,
    Epsilon,
}

#[derive(Args, Debug)]
pub(crate) struct CalibrateArgs {
    #[command(flatten)]
    pub(crate) params: ParamOpts,
    /// Which parameter to solve for; the rest are fixed.
    #[arg(long, value_enum)]
    pub(crate) solve: Option<SolveTarget>,
    /// Privacy parameter epsilon (fixed unless solving for it).
    #[arg(long)]
    pub(crate) epsilon: Option<f64>,
    /// Target delta.
    #[arg(long)]
    pub(crate) delta: Option<f64>,
    /// Round the solved threshold gap up to the next feasible integer.
    #[arg(long = "integer-gap")]
    pub(crate) integer_gap: bool,
    #[command(flatten)]
    pub(crate) common: CommonOpts,
}

#[derive(Serialize)]
struct CalRow {
    accounting: &'static str,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

#[derive(Serialize)]
struct CalReport {
    solve: &'static str,
    rows: Vec<CalRow>,
    /// add-the-deltas value over exact value, when both solved.
    #[serde(skip_serializing_if = "Option::is_none")]
    ratio: Option<f64>,
}

fn empty_cal_row(accounting: &'static str) -> CalRow {
    CalRow {
        accounting,
        status: "solved",
        gap: None,
        tau_star: None,
        sigma: None,
        epsilon: None,
        reason: None,
    }
}

pub(crate) fn cmd_calibrate(args: &CalibrateArgs) -> CliResult<()> {
    let cfg = FileCfg::load(args.common.config.as_deref())?;
    let solve = match args.solve {
        Some(s) => s,
        None => match req(cfg.string("solve")?, "solve")?.as_str() {
            "tau-star" => SolveTarget::TauStar,
            "sigma" => SolveTarget::Sigma,
            "epsilon" => SolveTarget::Epsilon,
            other => {
                return Err(CliError::Usage(format!(
                    "unknown solve target {other:?}; expected tau-star, sigma, or epsilon"
                )))
            }
        },
    };
    let delta = req(args.delta.or(cfg.f64("delta")?), "delta")?;
    let tau = req(args.params.tau.or(cfg.f64("tau")?), "tau")?;
    let cu = req(args.params.cu.or(cfg.u64("cu")?), "cu")?;
    let mu_o = args.params.mu_o.or(cfg.f64("mu-o")?).unwrap_or(0.0);
    let columns = if mu_o > 0.0 { 2 } else { 1 };
    let integer_gap = args.integer_gap || cfg.bool("integer-gap")?.unwrap_or(false);
    let accountings = [
        ("add-the-deltas", Accounting::AddTheDeltas),
        ("exact", Accounting::Exact),
    ];

    let mut rows = Vec::new();
    let solve_name = match solve {
        SolveTarget::TauStar => "tau-star",
        SolveTarget::Sigma => "sigma",
        SolveTarget::Epsilon => "epsilon",
    };
    for (name, kind) in accountings {
        let mut row = empty_cal_row(name);
        let outcome = match solve {
            SolveTarget::TauStar => {
                let sigma = req(args.params.sigma.or(cfg.f64("sigma")?), "sigma")?;
                let epsilon = req(args.epsilon.or(cfg.f64("epsilon")?), "epsilon")?;
                let request = CalibrationRequest {
                    tau_low: tau,
                    tau_high: None,
                    sigma: Some(sigma),
                    c_u: cu,
                    mu_o,
                    num_columns: columns,
                    epsilon,
                    delta_target: delta,
                    accounting: kind,
                    gap_mode: if integer_gap {
                        GapMode::IntegerGap
                    } else {
                        GapMode::RealValued
                    },
                };
                calibrate::min_threshold_gap(&request)?
            }
            SolveTarget::Sigma => {
                let tau_star = req(args.params.tau_star.or(cfg.f64("tau-star")?), "tau-star")?;
                let epsilon = req(args.epsilon.or(cfg.f64("epsilon")?), "epsilon")?;
                calibrate::min_sigma(tau_star - tau, epsilon, delta, cu, mu_o, kind)?
            }
            SolveTarget::Epsilon => {
                let sigma = req(args.params.sigma.or(cfg.f64("sigma")?), "sigma")?;
                let tau_star = req(args.params.tau_star.or(cfg.f64("tau-star")?), "tau-star")?;
                let params = GshmParams::new(tau, tau_star, sigma, cu, mu_o, columns)?;
                calibrate::epsilon_for_delta(&params, delta, kind)?
            }
        };
        match outcome {
            CalibrationOutcome::Solved { value } => match solve {
                SolveTarget::TauStar => {
                    row.gap = Some(value);
                    row.tau_star = Some(tau + value);
                }
                SolveTarget::Sigma => row.sigma = Some(value),
                SolveTarget::Epsilon => row.epsilon = Some(value),
            },
            CalibrationOutcome::Infeasible { reason, .. } => {
                row.status = "infeasible";
                row.reason = Some(reason.to_string());
            }
        }
        rows.push(row);
    }

    let solved = |r: &CalRow| r.gap.or(r.sigma).or(r.epsilon);
    let ratio = match (solved(&rows[0]), solved(&rows[1])) {
        (Some(add), Some(exact)) => Some(add / exact),
        _ => None,
    };
    let report = CalReport {
        solve: solve_name,
        rows,
        ratio,
    };

    let format = args.common.format(&cfg, Format::Table)?;
    let mut out = open_output(args.common.output_path(&cfg)?.as_deref())?;
    let value_header = match solve {
        SolveTarget::TauStar => "gap",
        SolveTarget::Sigma => "sigma",
        SolveTarget::Epsilon => "epsilon",
    };
    let headers: Vec<&str> = match solve {
        SolveTarget::TauStar => vec!["accounting", "status", "gap", "tau_star", "reason"],
        _ => vec!["accounting", "status", value_header, "reason"],
    };
    let cells = |r: &CalRow, num: fn(f64) -> String| {
        let mut v = vec![r.accounting.to_string(), r.status.to_string()];
        match solve {
            SolveTarget::TauStar => {
                v.push(r.gap.map(num).unwrap_or_default());
                v.push(r.tau_star.map(num).unwrap_or_default());
            }
            SolveTarget::Sigma => v.push(r.sigma.map(num).unwrap_or_default()),
            SolveTarget::Epsilon => v.push(r.epsilon.map(num).unwrap_or_default()),
        }
        v.push(r.reason.clone().unwrap_or_default());
        v
    };
    match format {
        Format::Table => {
            let body: Vec<Vec<String>> = report.rows.iter().map(|r| cells(r, sig6)).collect();
            render_table(&mut out, &headers, &body).map_err(|e| CliError::Io(e.to_string()))?;
            if let Some(ratio) = report.ratio {
                writeln!(out, "{value_header} ratio (add/exact): {}", sig6(ratio))
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
            writeln!(out, "{TABLE_FOOTNOTE}").map_err(|e| CliError::Io(e.to_string()))?;
        }
        Format::Csv => {
            let mut headers = headers.clone();
            headers.push("ratio");
            let body: Vec<Vec<String>> = report
                .rows
                .iter()
                .map(|r| {
                    let mut v = cells(r, full);
                    v.push(report.ratio.map(full).unwrap_or_default());
                    v
                })
                .collect();
            render_csv(&mut out, &headers, &body).map_err(|e| CliError::Io(e.to_string()))?;
        }
        Format::Json => render_json(&mut out, &report)?,
    }

    if report.rows.iter().all(|r| r.status == "infeasible") {
        let reasons: Vec<String> = report
            .rows
            .iter()
            .filter_map(|r| r.reason.clone())
            .collect();
        return Err(CliError::Domain(format!(
            "target infeasible for every accounting ({})",
            reasons.join(", ")
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- curve --

#[derive(Args, Debug)]
pub(crate) struct CurveArgs {
    #[command(flatten)]
    pub(crate) params: ParamOpts,
    /// Smallest epsilon on the grid.
    #[arg(long = "eps-min")]
    pub(crate) eps_min: Option<f64>,
    /// Largest epsilon on the grid.
    #[arg(long = "eps-max")]
    pub(crate) eps_max: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    pub(crate) points: Option<u64>,
    #[command(flatten)]
    pub(crate) common: CommonOpts,
}

pub(crate) fn cmd_curve(args: &CurveArgs) -> CliResult<()> {
    let cfg = FileCfg::load(args.common.config.as_deref())?;
    let params = resolve_params(&args.params, &cfg)?;
    let eps_min = args.eps_min.or(cfg.f64("eps-min")?).unwrap_or(0.1);
    let eps_max = args.eps_max.or(cfg.f64("eps-max")?).unwrap_or(0.504);
    let points = args.points.or(cfg.u64("points")?).unwrap_or(64);
    if points < 2 {
        return Err(CliError::Usage("curve needs at least 2 points".into()));
    }
    if !(eps_min < eps_max) {
        return Err(CliError::Usage(format!(
            "eps-min {eps_min} must be below eps-max {eps_max}"
        )));
    }
    // Lerp form hits both endpoints exactly.
    let grid: Vec<f64> = (0..points)
        .map(|i| {
            let t = i as f64 / (points - 1) as f64;
            eps_min * (1.0 - t) + eps_max * t
        })
        .collect();
    let curve = calibrate::delta_curve(&params, &grid)?;

    let format = args.common.format(&cfg, Format::Csv)?;
    let mut out = open_output(args.common.output_path(&cfg)?.as_deref())?;
    let headers = ["epsilon", "delta_exact", "delta_add", "ratio"];
    let cells = |num: fn(f64) -> String| -> Vec<Vec<String>> {
        curve
            .iter()
            .map(|p| {
                vec![
                    num(p.epsilon),
                    num(p.delta_exact),
                    num(p.delta_add),
                    num(p.ratio),
                ]
            })
            .collect()
    };
    match format {
        Format::Table => {
            render_table(&mut out, &headers, &cells(sig6))
                .map_err(|e| CliError::Io(e.to_string()))?;
            writeln!(out, "{TABLE_FOOTNOTE}").map_err(|e| CliError::Io(e.to_string()))?;
        }
        Format::Csv => {
            render_csv(&mut out, &headers, &cells(full)).map_err(|e| CliError::Io(e.to_string()))?
        }
        Format::Json => render_json(&mut out, &curve)?,
    }
    Ok(())
}

// ------------------------------------------------------------------ run --

#[derive(Args, Debug)]
pub(crate) struct RunArgs {
    /// Input records: CSV with header user_id,group_id,<value columns>.
    #[arg(long, value_name = "PATH")]
    pub(crate) input: Option<PathBuf>,
    #[command(flatten)]
    pub(crate) params: ParamOpts,
    /// Noise standard deviation per aggregate column (repeat per column).
    #[arg(long = "column-sigma", value_name = "SD")]
    pub(crate) column_sigma: Vec<f64>,
    /// Clamp bound / sensitivity per aggregate column (repeat per column).
    #[arg(long = "column-sensitivity", value_name = "BOUND")]
    pub(crate) column_sensitivity: Vec<f64>,
    /// RNG seed; the release is a pure function of (input, config, seed).
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// Epsilon for the accounting sidecar (or "epsilon-grid" in --config).
    #[arg(long)]
    pub(crate) epsilon: Option<f64>,
    #[command(flatten)]
    pub(crate) common: CommonOpts,
}

#[derive(Serialize)]
struct RunSidecar {
    params: GshmParams,
    seed: u64,
    value_columns: Vec<String>,
    groups_in: usize,
    groups_released: usize,
    bounding: BoundingReport,
    accounting: Vec<AccountingReport>,
}

pub(crate) fn cmd_run(args: &RunArgs) -> CliResult<()> {
    let cfg = FileCfg::load(args.common.config.as_deref())?;
    let input = req(
        args.input
            .clone()
            .or(cfg.string("input")?.map(PathBuf::from)),
        "input",
    )?;
    let output = req(args.common.output_path(&cfg)?, "output")?;
    let seed = req(args.seed.or(cfg.u64("seed")?), "seed")?;
    let column_sigma = if args.column_sigma.is_empty() {
        cfg.f64_list("column-sigma")?.unwrap_or_default()
    } else {
        args.column_sigma.clone()
    };
    let column_sensitivity = if args.column_sensitivity.is_empty() {
        cfg.f64_list("column-sensitivity")?.unwrap_or_default()
    } else {
        args.column_sensitivity.clone()
    };
    let epsilons = match args.epsilon.or(cfg.f64("epsilon")?) {
        Some(e) => vec![e],
        None => req(cfg.f64_list("epsilon-grid")?, "epsilon")?,
    };

    let tau = req(args.params.tau.or(cfg.f64("tau")?), "tau")?;
    let tau_star = req(args.params.tau_star.or(cfg.f64("tau-star")?), "tau-star")?;
    let sigma = req(args.params.sigma.or(cfg.f64("sigma")?), "sigma")?;
    let cu = req(args.params.cu.or(cfg.u64("cu")?), "cu")?;
    let mu_o = match args.params.mu_o.or(cfg.f64("mu-o")?) {
        Some(m) => m,
        None => mechanism::mu_from_sensitivities(&column_sensitivity, &column_sigma)?,
    };
    let params = GshmParams::new(
        tau,
        tau_star,
        sigma,
        cu,
        mu_o,
        1 + column_sigma.len() as u64,
    )?;
    let config = MechanismConfig {
        params: params.clone(),
        per_column_sigma: column_sigma,
        per_column_sensitivity: column_sensitivity,
        seed,
    };
    config.validate()?;

    let reader =
        File::open(&input).map_err(|e| CliError::Io(format!("{}: {e}", input.display())))?;
    let (records, value_columns) = mechanism::read_records(reader)?;
    if value_columns.len() != config.per_column_sigma.len() {
        return Err(CliError::Domain(format!(
            "input has {} value column(s) but the config declares {}",
            value_columns.len(),
            config.per_column_sigma.len()
        )));
    }
    let (dataset, bounding) =
        mechanism::bound_contributions(records, cu, &config.per_column_sensitivity)?;
    let release = mechanism::run_gshm(&dataset, &config)?;

    let format = args.common.format(&cfg, Format::Csv)?;
    let release_file =
        File::create(&output).map_err(|e| CliError::Io(format!("{}: {e}", output.display())))?;
    match format {
        Format::Csv => mechanism::write_release_csv(release_file, &value_columns, &release)?,
        Format::Json => mechanism::write_release_json(release_file, &release)?,
        Format::Table => {
            return Err(CliError::Usage(
                "run writes machine output; use --format csv or json".into(),
            ))
        }
    }

    let mut accounting_reports = Vec::new();
    for &epsilon in &epsilons {
        accounting_reports.push(accounting::exact_delta(&params, epsilon)?);
    }
    let sidecar = RunSidecar {
        params,
        seed,
        value_columns,
        groups_in: dataset.len(),
        groups_released: release.len(),
        bounding,
        accounting: accounting_reports,
    };
    let sidecar_path = output.with_extension("report.json");
    let sidecar_file = File::create(&sidecar_path)
        .map_err(|e| CliError::Io(format!("{}: {e}", sidecar_path.display())))?;
    serde_json::to_writer_pretty(sidecar_file, &sidecar)
        .map_err(|e| CliError::Io(format!("writing {}: {e}", sidecar_path.display())))?;

    eprintln!(
        "released {} of {} groups; wrote {} and {}",
        sidecar.groups_released,
        sidecar.groups_in,
        output.display(),
        sidecar_path.display()
    );
    Ok(())
}

// --------------------------------------------------------------- verify --

#[derive(Args, Debug)]
pub(crate) struct VerifyArgs {
    #[command(flatten)]
    pub(crate) params: ParamOpts,
    /// Rows with counts far above the threshold in the worst-case pair.
    #[arg(long = "a-plus")]
    pub(crate) a_plus: Option<u64>,
    /// Rows sitting exactly at the deterministic threshold.
    #[arg(long = "a-equal")]
    pub(crate) a_equal: Option<u64>,
    /// Count for the large rows (default tau + 20 sigma).
    #[arg(long = "big-count")]
    pub(crate) big_count: Option<u64>,
    /// Privacy parameter epsilon.
    #[arg(long)]
    pub(crate) epsilon: Option<f64>,
    /// Monte-Carlo sample count.
    #[arg(long)]
    pub(crate) samples: Option<u64>,
    /// RNG seed.
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    #[command(flatten)]
    pub(crate) common: CommonOpts,
}

#[derive(Serialize)]
struct DirectionCheck {
    estimate: f64,
    stderr: f64,
    reference: f64,
    within_4_stderr: bool,
}

#[derive(Serialize)]
struct VerifyReport {
    a_plus: u64,
    a_equal: u64,
    big_count: u64,
    epsilon: f64,
    samples: u64,
    seed: u64,
    forward: DirectionCheck,
    reverse: DirectionCheck,
    #[serde(skip_serializing_if = "Option::is_none")]
    quadrature_forward: Option<DirectionCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    quadrature_reverse: Option<DirectionCheck>,
    exact: AccountingReport,
    pass: bool,
}

pub(crate) fn cmd_verify(args: &VerifyArgs) -> CliResult<()> {
    let cfg = FileCfg::load(args.common.config.as_deref())?;
    let params = resolve_params(&args.params, &cfg)?;
    if params.c_u() > 4 {
        return Err(CliError::Domain(format!(
            "verify is a desk-scale tool; cu must be at most 4, got {}",
            params.c_u()
        )));
    }
    let a_plus = req(args.a_plus.or(cfg.u64("a-plus")?), "a-plus")?;
    let a_equal = req(args.a_equal.or(cfg.u64("a-equal")?), "a-equal")?;
    let epsilon = req(args.epsilon.or(cfg.f64("epsilon")?), "epsilon")?;
    let samples = args.samples.or(cfg.u64("samples")?).unwrap_or(1_000_000);
    let seed = args.seed.or(cfg.u64("seed")?).unwrap_or(7);

    let pair = match args.big_count.or(cfg.u64("big-count")?) {
        Some(b) => WorstCasePair::with_big_count(a_plus, a_equal, b, params.clone())?,
        None => WorstCasePair::new(a_plus, a_equal, params.clone())?,
    };
    let est: PlrvEstimate = oracle::estimate_hockey_stick(&pair, epsilon, samples, seed)?;

    // The two sampled directions correspond to the scan's variable terms at
    // this row split, reconstructed here as references.
    let beta = std_normal_cdf(params.gap() / params.sigma())?;
    let beta_pow = beta.powi(a_equal as i32);
    let (eps_mixed, eps_swapped) = accounting::shifted_epsilons(&params, epsilon, a_equal);
    let mu = if a_plus == 0 {
        0.0
    } else {
        accounting::mu_of_a_plus(&params, a_plus)?
    };
    let mixed = 1.0 - beta_pow + beta_pow * gaussian::gaussian_delta(mu, eps_mixed)?;
    let swapped = gaussian::gaussian_delta(mu, eps_swapped)?;

    let check = |estimate: f64, stderr: f64, reference: f64| DirectionCheck {
        estimate,
        stderr,
        reference,
        within_4_stderr: (estimate - reference).abs() <= 4.0 * stderr,
    };
    let forward = check(est.delta_forward, est.forward_stderr, mixed);
    let reverse = check(est.delta_reverse, est.reverse_stderr, swapped);

    let quadrature_applies = a_plus == 1 && a_equal == 0 && params.num_columns() == 1;
    let (quadrature_forward, quadrature_reverse) = if quadrature_applies {
        let qf = oracle::quadrature_delta_single_row(&pair, epsilon, Direction::Forward)?;
        let qr = oracle::quadrature_delta_single_row(&pair, epsilon, Direction::Reverse)?;
        (
            Some(check(qf, est.forward_stderr, est.delta_forward)),
            Some(check(qr, est.reverse_stderr, est.delta_reverse)),
        )
    } else {
        (None, None)
    };

    let exact = accounting::exact_delta(&params, epsilon)?;
    let pass = forward.within_4_stderr
        && reverse.within_4_stderr
        && quadrature_forward
            .as_ref()
            .map_or(true, |q| q.within_4_stderr)
        && quadrature_reverse
            .as_ref()
            .map_or(true, |q| q.within_4_stderr);

    let report = VerifyReport {
        a_plus,
        a_equal,
        big_count: pair.big_count(),
        epsilon,
        samples,
        seed,
        forward,
        reverse,
        quadrature_forward,
        quadrature_reverse,
        exact,
        pass,
    };

    let format = args.common.format(&cfg, Format::Table)?;
    let mut out = open_output(args.common.output_path(&cfg)?.as_deref())?;
    match format {
        Format::Json => render_json(&mut out, &report)?,
        Format::Table | Format::Csv => {
            let headers = ["check", "estimate", "stderr", "reference", "ok"];
            let num: fn(f64) -> String = if format == Format::Csv { full } else { sig6 };
            let mut body = Vec::new();
            let mut push = |name: &str, c: &DirectionCheck| {
                body.push(vec![
                    name.to_string(),
                    num(c.estimate),
                    num(c.stderr),
                    num(c.reference),
                    if c.within_4_stderr { "yes" } else { "NO" }.to_string(),
                ]);
            };
            push("forward_vs_term", &report.forward);
            push("reverse_vs_term", &report.reverse);
            if let Some(q) = &report.quadrature_forward {
                push("quadrature_forward_vs_mc", q);
            }
            if let Some(q) = &report.quadrature_reverse {
                push("quadrature_reverse_vs_mc", q);
            }
            if format == Format::Csv {
                render_csv(&mut out, &headers, &body).map_err(|e| CliError::Io(e.to_string()))?;
            } else {
                writeln!(
                    out,
                    "worst-case pair: a_plus={} a_equal={} big_count={} epsilon={} \
                     samples={} seed={}",
                    report.a_plus,
                    report.a_equal,
                    report.big_count,
                    report.epsilon,
                    report.samples,
                    report.seed
                )
                .map_err(|e| CliError::Io(e.to_string()))?;
                render_table(&mut out, &headers, &body)
                    .map_err(|e| CliError::Io(e.to_string()))?;
                writeln!(
                    out,
                    "exact delta {} (binding {}, argmax a_equal {})",
                    sig6(report.exact.delta_exact),
                    report.exact.binding_term,
                    report.exact.argmax_a_equal
                )
                .map_err(|e| CliError::Io(e.to_string()))?;
                writeln!(out, "verdict: {}", if report.pass { "PASS" } else { "FAIL" })
                    .map_err(|e| CliError::Io(e.to_string()))?;
            }
        }
    }

    if !report.pass {
        return Err(CliError::Domain(
            "verification failed: Monte-Carlo estimate disagrees with the accounting beyond \
             4 standard errors"
                .into(),
        ));
    }
    Ok(())
}

// ------------------------------------------------------------ casestudy --

#[derive(Args, Debug)]
pub(crate) struct CasestudyArgs {
    #[command(flatten)]
    pub(crate) common: CommonOpts,
}

#[derive(Serialize)]
struct Milestone {
    scenario: &'static str,
    item: String,
    value: String,
    expected: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pass: Option<bool>,
}

// Scenario fixtures: one user per group cap of 51914 groups, tau = 1,
// epsilon 0.349, and the sigma = 2228 Gaussian baseline as the delta target
// so threshold comparisons are exact at the floor.
const CU: u64 = 51914;
const EPS: f64 = 0.349;

fn scenario_one(milestones: &mut Vec<Milestone>) -> CliResult<()> {
    let baseline = GshmParams::new(1.0, 2.0, 2228.0, CU, 0.0, 1)?;
    let target = gaussian::gaussian_delta(mu_full(&baseline)?, EPS)?;
    // (sigma, expected add gap +- tol, expected exact gap +- tol); the 2228
    // row expects add-the-deltas to be infeasible outright.
    let expectations: &[(f64, Option<(f64, f64)>, (f64, f64))] = &[
        (2228.0, None, (13947.0, 1.0)),
        (2300.0, Some((f64::NAN, f64::INFINITY)), (f64::NAN, f64::INFINITY)),
        (2396.0, Some((15148.0, 1.0)), (14998.0, 1.0)),
        (2500.0, Some((f64::NAN, f64::INFINITY)), (f64::NAN, f64::INFINITY)),
        (2600.0, Some((f64::NAN, f64::INFINITY)), (f64::NAN, f64::INFINITY)),
        (2699.0, Some((16910.0, 10.0)), (16894.0, 2.0)),
        (2800.0, Some((f64::NAN, f64::INFINITY)), (f64::NAN, f64::INFINITY)),
    ];
    for &(sigma, add_expect, exact_expect) in expectations {
        let request = |accounting| CalibrationRequest {
            tau_low: 1.0,
            tau_high: None,
            sigma: Some(sigma),
            c_u: CU,
            mu_o: 0.0,
            num_columns: 1,
            epsilon: EPS,
            delta_target: target,
            accounting,
            gap_mode: GapMode::IntegerGap,
        };
        let add = calibrate::min_threshold_gap(&request(Accounting::AddTheDeltas))?;
        let exact = calibrate::min_threshold_gap(&request(Accounting::Exact))?;
        let gap_milestone = |name: &str, outcome: &CalibrationOutcome,
                             expect: Option<(f64, f64)>| {
            let value = match outcome {
                CalibrationOutcome::Solved { value } => format!("{value}"),
                CalibrationOutcome::Infeasible { reason, .. } => format!("infeasible ({reason})"),
            };
            let (expected, pass) = match expect {
                None => (
                    "infeasible".to_string(),
                    Some(matches!(
                        outcome,
                        CalibrationOutcome::Infeasible {
                            reason: InfeasibilityReason::GaussianFloor,
                            ..
                        }
                    )),
                ),
                Some((want, _)) if want.is_nan() => ("-".to_string(), None),
                Some((want, tol)) => (
                    format!("{want} +- {tol}"),
                    Some(matches!(outcome, CalibrationOutcome::Solved { value } if (value - want).abs() <= tol)),
                ),
            };
            Milestone {
                scenario: "minimal-gap",
                item: format!("sigma={sigma} {name} gap"),
                value,
                expected,
                pass,
            }
        };
        milestones.push(gap_milestone("add", &add, add_expect));
        milestones.push(gap_milestone("exact", &exact, Some(exact_expect)));
    }
    Ok(())
}

fn scenario_two(milestones: &mut Vec<Milestone>) -> CliResult<()> {
    let params = GshmParams::new(1.0, 1.0 + 16176.0, 2228.0, CU, 0.0, 1)?;
    // (delta target, expected add/exact ratio); the smallest target sits
    // below the suppression floor, so its epsilon comes from the plain
    // Gaussian crossing instead of the exact accounting.
    let cases = [
        (1e-8, 2.0),
        (1e-7, 1.1),
        (1e-6, 1.01),
        (1e-5, 1.001),
    ];
    for (target, want_ratio) in cases {
        let epsilon = match calibrate::epsilon_for_delta(&params, target, Accounting::Exact)? {
            CalibrationOutcome::Solved { value } => value,
            CalibrationOutcome::Infeasible { .. } => {
                gaussian::calibrate_epsilon(mu_full(&params)?, target)?
            }
        };
        let exact = accounting::exact_delta(&params, epsilon)?.delta_exact;
        let add = accounting::add_the_deltas(&params, epsilon)?;
        let ratio = add / exact;
        let pass = ((ratio - 1.0) - (want_ratio - 1.0)).abs() <= 0.15 * (want_ratio - 1.0);
        milestones.push(Milestone {
            scenario: "ratio-curve",
            item: format!("delta={target:e} (epsilon {})", sig6(epsilon)),
            value: format!("{ratio:.6}"),
            expected: format!("{want_ratio} +- 15% on ratio-1"),
            pass: Some(pass),
        });
    }
    Ok(())
}

pub(crate) fn cmd_casestudy(args: &CasestudyArgs) -> CliResult<()> {
    let cfg = FileCfg::load(args.common.config.as_deref())?;
    let mut milestones = Vec::new();
    scenario_one(&mut milestones)?;
    scenario_two(&mut milestones)?;

    let checked = milestones.iter().filter(|m| m.pass.is_some()).count();
    let passed = milestones.iter().filter(|m| m.pass == Some(true)).count();

    let format = args.common.format(&cfg, Format::Table)?;
    let mut out = open_output(args.common.output_path(&cfg)?.as_deref())?;
    let headers = ["scenario", "item", "value", "expected", "status"];
    let body: Vec<Vec<String>> = milestones
        .iter()
        .map(|m| {
            vec![
                m.scenario.to_string(),
                m.item.clone(),
                m.value.clone(),
                m.expected.clone(),
                match m.pass {
                    Some(true) => "PASS".to_string(),
                    Some(false) => "FAIL".to_string(),
                    None => "-".to_string(),
                },
            ]
        })
        .collect();
    match format {
        Format::Table => {
            render_table(&mut out, &headers, &body).map_err(|e| CliError::Io(e.to_string()))?;
            writeln!(out, "milestones passed: {passed}/{checked}")
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
        Format::Csv => {
            render_csv(&mut out, &headers, &body).map_err(|e| CliError::Io(e.to_string()))?
        }
        Format::Json => render_json(&mut out, &milestones)?,
    }

    if passed != checked {
        return Err(CliError::Domain(format!(
            "case study failed: {passed}/{checked} milestones passed"
        )));
    }
    Ok(())
}
