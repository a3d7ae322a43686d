//! JSON and CSV report output.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::experiment::BenchReport;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_COLUMNS: [&str; 28] = [
    "kernel",
    "pattern",
    "n",
    "seed",
    "layout",
    "model",
    "trials",
    "ratio",
    "cache_translations",
    "shallow_copy",
    "t_original",
    "t_retain",
    "t_manual",
    "t_auto",
    "overhead_manual_pct",
    "overhead_auto_pct",
    "bytes_user",
    "bytes_log",
    "bytes_meta",
    "migrations",
    "migration_bytes",
    "extensions",
    "translations",
    "breakdown_alloc",
    "breakdown_translate",
    "breakdown_deepcopy",
    "breakdown_other",
    "valid",
];

fn label<T: Serialize>(v: T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => panic!("not a unit variant: {other:?}"),
    }
}

fn opt<T>(v: Option<T>, f: impl FnOnce(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

/// One object for a single report, an array for a series.
pub fn to_json(reports: &[BenchReport]) -> String {
    let mut out = match reports {
        [one] => serde_json::to_string_pretty(one),
        many => serde_json::to_string_pretty(many),
    }
    .expect("reports serialize");
    out.push('\n');
    out
}

pub fn from_json(text: &str) -> Result<Vec<BenchReport>> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    let r = if v.is_array() {
        serde_json::from_value(v)
    } else {
        serde_json::from_value(v).map(|one| vec![one])
    };
    r.map_err(|e| Error::Config(e.to_string()))
}

/// Header plus one row per report. Times in seconds with nanosecond
/// resolution, overheads in percent with two decimals.
pub fn to_csv(reports: &[BenchReport]) -> String {
    let mut out = CSV_COLUMNS.join(",");
    out.push('\n');
    for r in reports {
        let auto = r.phases.auto;
        let b = r.breakdown.as_ref();
        let row = [
            label(r.kernel),
            label(r.pattern),
            r.n.to_string(),
            r.seed.to_string(),
            label(r.layout),
            label(r.model),
            r.trials.to_string(),
            r.ratio.to_string(),
            r.cache_translations.to_string(),
            r.shallow_copy.to_string(),
            format!("{:.9}", r.t_original),
            format!("{:.9}", r.t_retain),
            format!("{:.9}", r.t_manual),
            opt(r.t_auto, |t| format!("{t:.9}")),
            format!("{:.2}", r.overhead_manual_pct),
            opt(r.overhead_auto_pct, |o| format!("{o:.2}")),
            r.bytes.user.to_string(),
            r.bytes.log.to_string(),
            r.bytes.meta.to_string(),
            r.migrations.to_string(),
            r.migration_bytes.to_string(),
            opt(auto, |a| a.extensions_allocated.to_string()),
            opt(auto, |a| a.translations.to_string()),
            opt(b, |b| format!("{:.6}", b.alloc)),
            opt(b, |b| format!("{:.6}", b.translate)),
            opt(b, |b| format!("{:.6}", b.deepcopy)),
            opt(b, |b| format!("{:.6}", b.other)),
            r.valid.to_string(),
        ];
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn render(reports: &[BenchReport], format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => to_json(reports),
        ReportFormat::Csv => to_csv(reports),
    }
}

/// Writes `reports` to `path`.
pub fn emit_report(reports: &[BenchReport], format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, render(reports, format)).map_err(Error::io(path))
}
