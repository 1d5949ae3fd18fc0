//! File formats: the CSV tables, the run summary and the manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use odeflow_core::{OptimizerKind, TrainRecord};

use crate::error::{CliError, CliResult};

pub const HISTORY_HEADER: [&str; 7] = [
    "epoch",
    "method",
    "a0",
    "loss",
    "param",
    "terminal_variance",
    "grad_norm",
];
pub const LANDSCAPE_HEADER: [&str; 5] = ["a_star", "t", "sigma2", "a", "loss"];
pub const SUMMARY_HEADER: [&str; 6] = [
    "method",
    "a0",
    "final_loss",
    "epochs_to_1e-6",
    "slope_1_50",
    "status",
];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub method: OptimizerKind,
    pub a0: f64,
    pub loss: f64,
    pub param: f64,
    pub terminal_variance: f64,
    pub grad_norm: f64,
}

impl HistoryRow {
    pub fn from_record(method: OptimizerKind, a0: f64, r: &TrainRecord) -> Self {
        Self {
            epoch: r.epoch,
            method,
            a0,
            loss: r.loss,
            param: r.params[0],
            terminal_variance: r.terminal_variance,
            grad_norm: r.grad_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeRow {
    pub a_star: f64,
    pub t: f64,
    pub sigma2: f64,
    pub a: f64,
    /// `None` where the loss overflowed.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: OptimizerKind,
    pub a0: f64,
    pub final_loss: Option<f64>,
    pub epochs_to_target: Option<usize>,
    pub slope: Option<f64>,
    pub status: String,
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(CliError::csv(path))
}

pub fn write_history(path: &Path, rows: &[HistoryRow]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(HISTORY_HEADER)
        .map_err(CliError::csv(path))?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.method.to_string(),
            fmt_f64(r.a0),
            fmt_f64(r.loss),
            fmt_f64(r.param),
            fmt_f64(r.terminal_variance),
            fmt_f64(r.grad_norm),
        ])
        .map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

pub fn write_landscape(path: &Path, rows: &[LandscapeRow]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(LANDSCAPE_HEADER)
        .map_err(CliError::csv(path))?;
    for r in rows {
        w.write_record([
            fmt_f64(r.a_star),
            fmt_f64(r.t),
            fmt_f64(r.sigma2),
            fmt_f64(r.a),
            r.loss.map(fmt_f64).unwrap_or_default(),
        ])
        .map_err(CliError::csv(path))?;
    }
    w.flush().map_err(CliError::io(path))
}

fn read_rows(path: &Path, header: &[&str]) -> CliResult<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(CliError::csv(path))?;
    let found = r.headers().map_err(CliError::csv(path))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(CliError::Usage(format!(
            "{}: unexpected header {:?}",
            path.display(),
            found
        )));
    }
    r.records()
        .collect::<Result<_, _>>()
        .map_err(CliError::csv(path))
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> CliResult<T> {
    let raw = rec.get(i).unwrap_or_default();
    raw.parse().map_err(|_| {
        CliError::Usage(format!(
            "{}: bad value {raw:?} in column {i}",
            path.display()
        ))
    })
}

pub fn read_history(path: &Path) -> CliResult<Vec<HistoryRow>> {
    read_rows(path, &HISTORY_HEADER)?
        .iter()
        .map(|rec| {
            Ok(HistoryRow {
                epoch: field(path, rec, 0)?,
                method: field(path, rec, 1)?,
                a0: field(path, rec, 2)?,
                loss: field(path, rec, 3)?,
                param: field(path, rec, 4)?,
                terminal_variance: field(path, rec, 5)?,
                grad_norm: field(path, rec, 6)?,
            })
        })
        .collect()
}

pub fn read_landscape(path: &Path) -> CliResult<Vec<LandscapeRow>> {
    read_rows(path, &LANDSCAPE_HEADER)?
        .iter()
        .map(|rec| {
            let loss = match rec.get(4) {
                Some("") | None => None,
                Some(_) => Some(field(path, rec, 4)?),
            };
            Ok(LandscapeRow {
                a_star: field(path, rec, 0)?,
                t: field(path, rec, 1)?,
                sigma2: field(path, rec, 2)?,
                a: field(path, rec, 3)?,
                loss,
            })
        })
        .collect()
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| "NA".into())
}

pub fn render_summary(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<15} {:>6} {:>24} {:>15} {:>11}  {}",
        SUMMARY_HEADER[0],
        SUMMARY_HEADER[1],
        SUMMARY_HEADER[2],
        SUMMARY_HEADER[3],
        SUMMARY_HEADER[4],
        SUMMARY_HEADER[5]
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<15} {:>6} {:>24} {:>15} {:>11}  {}",
            r.method.as_str(),
            r.a0,
            opt(r.final_loss.map(fmt_f64)),
            opt(r.epochs_to_target),
            opt(r.slope.map(|s| format!("{s:.6}"))),
            r.status
        );
    }
    out
}

pub fn parse_summary(text: &str) -> CliResult<Vec<SummaryRow>> {
    fn maybe<T: std::str::FromStr>(s: &str) -> CliResult<Option<T>> {
        if s == "NA" {
            return Ok(None);
        }
        s.parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("summary: bad value {s:?}")))
    }
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .unwrap_or_default()
        .split_whitespace()
        .collect();
    if header != SUMMARY_HEADER {
        return Err(CliError::Usage(format!(
            "summary: unexpected header {header:?}"
        )));
    }
    lines
        .map(|line| {
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != SUMMARY_HEADER.len() {
                return Err(CliError::Usage(format!("summary: malformed line {line:?}")));
            }
            Ok(SummaryRow {
                method: f[0].parse()?,
                a0: f[1]
                    .parse()
                    .map_err(|_| CliError::Usage(format!("summary: bad a0 {:?}", f[1])))?,
                final_loss: maybe(f[2])?,
                epochs_to_target: maybe(f[3])?,
                slope: maybe(f[4])?,
                status: f[5].to_string(),
            })
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(CliError::io(path))
}

/// `key = value` lines that `--config` accepts back.
pub fn render_manifest(command: &str, settings: &[(&'static str, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "command = {command}");
    let _ = writeln!(out, "tool_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(
        out,
        "started_at = {}",
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    );
    for (k, v) in settings {
        let _ = writeln!(out, "{k} = {v}");
    }
    out
}
