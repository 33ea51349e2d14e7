//! CSV and JSON reports.
//!
//! Aggregate CSV header: `cell,<axis...>,metric,mean,std,n,failed`, one row
//! per (cell, metric), axes in sweep order. Per-run CSV header:
//! `cell,<axis...>,run,seed,<metric...>,error`. Numbers are written with 6
//! significant digits (`%.6g` style), so reports diff cleanly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{aggregate, CellSummary, ExperimentConfig, RunRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// `%.6g`: 6 significant digits, trailing zeros trimmed, exponent form
/// below 1e-4 or from 1e6.
pub fn fmt_g6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let mant = trim(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mant}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim(&format!("{x:.decimals$}")).to_string()
}

fn trim(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn axis_names(records: &[RunRecord]) -> Vec<String> {
    records
        .first()
        .map(|r| r.coords.iter().map(|c| c.param.clone()).collect())
        .unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

pub fn write_summary_csv<W: Write>(summary: &[CellSummary], axes: &[String], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(["metric", "mean", "std", "n", "failed"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for s in summary {
        let mut row = vec![s.cell.to_string()];
        row.extend(s.coords.iter().map(|c| c.value.to_string()));
        row.push(s.metric.clone());
        row.push(fmt_g6(s.mean));
        row.push(fmt_g6(s.std));
        row.push(s.n.to_string());
        row.push(s.failed.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], out: W) -> Result<()> {
    let axes = axis_names(records);
    let metrics: Vec<&str> = records
        .iter()
        .find(|r| r.metrics.is_some())
        .map(|r| r.scalars().iter().map(|(n, _)| *n).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["cell".to_string()];
    header.extend(axes.iter().cloned());
    header.extend(["run", "seed"].map(String::from));
    header.extend(metrics.iter().map(|m| m.to_string()));
    header.push("error".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.cell.to_string()];
        row.extend(r.coords.iter().map(|c| c.value.to_string()));
        row.push(r.run.to_string());
        row.push(r.seed.to_string());
        let vals = r.scalars();
        for m in &metrics {
            row.push(
                vals.iter()
                    .find(|(n, _)| n == m)
                    .map(|(_, v)| fmt_g6(*v))
                    .unwrap_or_default(),
            );
        }
        row.push(r.error.as_ref().map(|e| e.message.clone()).unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv: {e}")))
}

/// JSON mirror: the configuration, every record and the per-cell summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub config: ExperimentConfig,
    pub records: Vec<RunRecord>,
    pub summary: Vec<CellSummary>,
}

/// What a CSV report contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    Summary,
    Runs,
}

/// Renders a report to bytes.
pub fn render(cfg: &ExperimentConfig, records: &[RunRecord], format: Format, kind: CsvKind) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Err(Error::Param("no records to report".into()));
    }
    let mut buf = Vec::new();
    match format {
        Format::Csv => match kind {
            CsvKind::Summary => write_summary_csv(&aggregate(records), &axis_names(records), &mut buf)?,
            CsvKind::Runs => write_records_csv(records, &mut buf)?,
        },
        Format::Json => {
            let rep = JsonReport {
                config: cfg.clone(),
                records: records.to_vec(),
                summary: aggregate(records),
            };
            serde_json::to_writer_pretty(&mut buf, &rep).map_err(|e| Error::Config(format!("json: {e}")))?;
            buf.push(b'\n');
        }
    }
    Ok(buf)
}

/// Writes a report to `path`, or stdout when `None`.
pub fn emit_report(
    cfg: &ExperimentConfig,
    records: &[RunRecord],
    format: Format,
    kind: CsvKind,
    path: Option<&Path>,
) -> Result<()> {
    let bytes = render(cfg, records, format, kind)?;
    write_output(&bytes, path)
}

pub fn write_output(bytes: &[u8], path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| Error::io("<stdout>", e)),
    }
}
