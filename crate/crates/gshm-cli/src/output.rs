//! Output plumbing shared by every subcommand: format selection, output
//! redirection, and the table/CSV renderers.
//!
//! CSV carries full-precision decimals so values round-trip bit-exactly;
//! tables round to 6 significant digits for reading and say so in a
//! footnote.

use std::fs::File;
use std::io::{self, Write};
use std::path::Path;

use clap::ValueEnum;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub(crate) enum Format {
    Table,
    Csv,
    Json,
}

impl Format {
    pub(crate) fn parse_name(name: &str) -> Result<Self, CliError> {
        match name {
            "table" => Ok(Format::Table),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(CliError::Usage(format!(
                "unknown format {other:?}; expected table, csv, or json"
            ))),
        }
    }
}

pub(crate) fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    match path {
        Some(p) => {
            let f = File::create(p)
                .map_err(|e| CliError::Io(format!("creating {}: {e}", p.display())))?;
            Ok(Box::new(f))
        }
        None => Ok(Box::new(io::stdout())),
    }
}

/// Full-precision decimal rendering for machine output.
pub(crate) fn full(x: f64) -> String {
    format!("{x:.16e}")
}

/// 6-significant-digit rendering for tables; integers stay integers.
pub(crate) fn sig6(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e12 {
        format!("{}", x as i64)
    } else {
        format!("{x:.5e}")
    }
}

pub(crate) const TABLE_FOOTNOTE: &str =
    "# values rounded to 6 significant digits; csv/json output keeps full precision";

/// Renders rows of already-formatted cells as an aligned two-space table.
pub(crate) fn render_table(
    out: &mut dyn Write,
    headers: &[&str],
    rows: &[Vec<String>],
) -> io::Result<()> {
    let cols = headers.len();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let write_row = |out: &mut dyn Write, cells: &[String]| -> io::Result<()> {
        let mut line = String::new();
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if i + 1 < cols {
                for _ in cell.len()..widths[i] {
                    line.push(' ');
                }
            }
        }
        writeln!(out, "{}", line.trim_end())
    };
    write_row(out, &headers.iter().map(|h| h.to_string()).collect::<Vec<_>>())?;
    for row in rows {
        write_row(out, row)?;
    }
    Ok(())
}

/// Renders rows as CSV; cells must already be escaped-safe (no commas).
pub(crate) fn render_csv(
    out: &mut dyn Write,
    headers: &[&str],
    rows: &[Vec<String>],
) -> io::Result<()> {
    writeln!(out, "{}", headers.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub(crate) fn render_json<T: serde::Serialize>(
    out: &mut dyn Write,
    value: &T,
) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut *out, value)
        .map_err(|e| CliError::Io(format!("serializing output: {e}")))?;
    writeln!(out).map_err(|e| CliError::Io(e.to_string()))
}
