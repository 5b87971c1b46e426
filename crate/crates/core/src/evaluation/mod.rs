//! Regime comparison tables, accuracy-vs-FLOPs series and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{aggregate, Regime, RunLog, ScenarioRef};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub regime: Regime,
    pub end_accuracy: f64,
    pub average_accuracy: f64,
    pub needed_flops_fraction: f64,
    pub needed_train_flops_fraction: f64,
    pub memory_fraction: f64,
    /// Macro-averaged accuracy at the last step.
    pub end_macro_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub schema_version: u32,
    pub scenario: ScenarioRef,
    pub rows: Vec<TableRow>,
}

impl ComparisonTable {
    pub fn row(&self, regime: Regime) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.regime == regime)
    }
}

/// Table with fractions relative to the single fixed-largest log, rows in
/// baseline, largest, adaptive, naive order.
pub fn compare(logs: &[RunLog]) -> Result<ComparisonTable> {
    let first = logs
        .first()
        .ok_or_else(|| Error::InvalidArgument("no run logs to compare".into()))?;
    if let Some(other) = logs.iter().find(|l| l.scenario != first.scenario) {
        return Err(Error::InvalidArgument(format!(
            "logs cover different scenarios ({} vs {})",
            first.scenario.id, other.scenario.id
        )));
    }
    let refs: Vec<&RunLog> = logs
        .iter()
        .filter(|l| l.regime == Regime::FixedLargest)
        .collect();
    let reference = match refs.as_slice() {
        [one] => *one,
        [] => {
            return Err(Error::InvalidArgument(
                "comparison needs a fixed_largest log as reference".into(),
            ))
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "{} fixed_largest logs given, expected one",
                refs.len()
            )))
        }
    };
    let mut rows = Vec::with_capacity(logs.len());
    for regime in Regime::ALL {
        let mut of_regime: Vec<&RunLog> = logs.iter().filter(|l| l.regime == regime).collect();
        if of_regime.len() > 1 {
            return Err(Error::InvalidArgument(format!(
                "{} logs given for {regime}",
                of_regime.len()
            )));
        }
        if let Some(log) = of_regime.pop() {
            let a = aggregate(log, reference)?;
            rows.push(TableRow {
                regime,
                end_accuracy: a.end_accuracy,
                average_accuracy: a.average_accuracy,
                needed_flops_fraction: a.needed_flops_fraction,
                needed_train_flops_fraction: a.needed_train_flops_fraction,
                memory_fraction: a.memory_fraction,
                end_macro_accuracy: log.steps.last().map_or(0.0, |s| s.macro_accuracy),
            });
        }
    }
    Ok(ComparisonTable {
        schema_version: REPORT_SCHEMA_VERSION,
        scenario: first.scenario.clone(),
        rows,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub step: usize,
    pub cumulative_flops: u64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub regime: Regime,
    pub points: Vec<SeriesPoint>,
}

/// One (cumulative FLOPs, accuracy) point per step.
pub fn accuracy_flops_series(log: &RunLog) -> Series {
    Series {
        regime: log.regime,
        points: log
            .steps
            .iter()
            .map(|s| SeriesPoint {
                step: s.t,
                cumulative_flops: s.cumulative_flops,
                accuracy: s.accuracy,
            })
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    TextTable,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "text_table" | "text" | "txt" => Ok(ReportFormat::TextTable),
            other => Err(Error::InvalidArgument(format!(
                "unknown report format '{other}' (csv, json, text_table)"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    schema_version: u32,
    table: ComparisonTable,
    series: Vec<Series>,
}

pub fn render_report(table: &ComparisonTable, series: &[Series], format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => table_csv(table),
        ReportFormat::Json => {
            let doc = JsonReport {
                schema_version: REPORT_SCHEMA_VERSION,
                table: table.clone(),
                series: series.to_vec(),
            };
            let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
            s.push('\n');
            s
        }
        ReportFormat::TextTable => text_table(table),
    }
}

/// Inverse of the json rendering.
pub fn parse_json_report(text: &str) -> Result<(ComparisonTable, Vec<Series>)> {
    let doc: JsonReport =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report json: {e}")))?;
    if doc.schema_version != REPORT_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "unsupported report schema {}",
            doc.schema_version
        )));
    }
    Ok((doc.table, doc.series))
}

pub const TABLE_CSV_HEADER: &str =
    "regime,end_accuracy,average_accuracy,needed_flops_fraction,needed_train_flops_fraction,memory_fraction,end_macro_accuracy";

fn table_csv(table: &ComparisonTable) -> String {
    let mut s = String::from(TABLE_CSV_HEADER);
    s.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.regime.label(),
            r.end_accuracy,
            r.average_accuracy,
            r.needed_flops_fraction,
            r.needed_train_flops_fraction,
            r.memory_fraction,
            r.end_macro_accuracy
        );
    }
    s
}

fn pct(v: f64) -> String {
    format!("{:.1}%", 100.0 * v)
}

fn text_table(table: &ComparisonTable) -> String {
    let header = [
        "regime",
        "end acc",
        "avg acc",
        "FLOPs",
        "train FLOPs",
        "memory",
    ];
    let rows: Vec<[String; 6]> = table
        .rows
        .iter()
        .map(|r| {
            [
                r.regime.label().to_string(),
                pct(r.end_accuracy),
                pct(r.average_accuracy),
                pct(r.needed_flops_fraction),
                pct(r.needed_train_flops_fraction),
                pct(r.memory_fraction),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut s = format!(
        "{} ({}, scenario seed {})\n",
        table.scenario.dataset,
        serde_json::to_string(&table.scenario.kind)
            .unwrap()
            .trim_matches('"'),
        table.scenario.seed
    );
    let line = |cells: [&str; 6], s: &mut String| {
        let _ = write!(s, "{:<w$}", cells[0], w = widths[0]);
        for (c, w) in cells[1..].iter().zip(&widths[1..]) {
            let _ = write!(s, "  {c:>w$}");
        }
        s.push('\n');
    };
    line(header, &mut s);
    for row in &rows {
        line(
            [&row[0], &row[1], &row[2], &row[3], &row[4], &row[5]].map(|c| c.as_str()),
            &mut s,
        );
    }
    s
}

pub const SERIES_CSV_HEADER: &str = "regime,step,cumulative_flops,accuracy";

/// Per-regime series as csv, in the order given.
pub fn series_csv(series: &[Series]) -> String {
    let mut s = String::from(SERIES_CSV_HEADER);
    s.push('\n');
    for ser in series {
        for p in &ser.points {
            let _ = writeln!(
                s,
                "{},{},{},{}",
                ser.regime.as_str(),
                p.step,
                p.cumulative_flops,
                p.accuracy
            );
        }
    }
    s
}

#[cfg(test)]
mod tests;
