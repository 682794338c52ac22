// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{GridSearchResult, ParaphraseRow};
use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::kernel::MetricsRecord;

/// Significant digits used for every number in a table.
pub const SIG_DIGITS: usize = 6;

/// Renders `v` with six significant digits, `%g` style: plain notation for
/// decimal exponents in `[-5, 6)`, scientific otherwise, trailing zeros
/// dropped. Ties round half to even on the exact binary value.
pub fn format_sig(v: f64) -> String {
    if !v.is_finite() {
        return if v.is_nan() { "NaN".into() } else if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..SIG_DIGITS as i32).contains(&exp) {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, v))
    } else {
        format!("{}e{}", trim_zeros(mantissa.to_string()), exp)
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
    /// Absent value; rendered as an empty CSV cell or JSON `null`.
    Empty,
}

impl Cell {
    fn opt(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }

    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(v) => format_sig(*v),
            Cell::Empty => String::new(),
            Cell::Text(s) if s.contains([',', '"', '\n', '\r']) => {
                format!("\"{}\"", s.replace('"', "\"\""))
            }
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Num(v) if v.is_finite() => format_sig(*v),
            Cell::Num(_) | Cell::Empty => "null".into(),
            Cell::Text(s) => serde_json::to_string(s).expect("string serializes"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
}

impl TableFormat {
    pub fn extension(self) -> &'static str {
        match self {
            TableFormat::Csv => "csv",
            TableFormat::Json => "json",
        }
    }
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(Error::invalid(format!("unknown table format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

pub const METRIC_COLUMNS: [&str; 6] = ["layer", "kind", "f1_gt", "f1_llm", "d_kl", "css"];

impl Table {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                actual: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn from_metrics(name: impl Into<String>, records: &[MetricsRecord]) -> Self {
        let mut t = Table::new(name, &METRIC_COLUMNS);
        for r in records {
            t.rows.push(metric_cells(r));
        }
        t
    }

    pub fn from_grid(name: impl Into<String>, grid: &GridSearchResult) -> Self {
        let mut t = Table::new(name, &["layer", "beta", "rank", "f1_llm", "d_kl", "best"]);
        for g in &grid.table {
            t.rows.push(vec![
                Cell::Int(g.layer as i64),
                Cell::Num(g.beta),
                Cell::Int(g.rank as i64),
                Cell::Num(g.f1_llm),
                Cell::Num(g.d_kl),
                Cell::Int(i64::from(*g == grid.best)),
            ]);
        }
        t
    }

    pub fn from_paraphrases(name: impl Into<String>, rows: &[ParaphraseRow]) -> Self {
        let mut columns = vec!["paraphrase", "tokens"];
        columns.extend(METRIC_COLUMNS);
        let mut t = Table::new(name, &columns);
        for p in rows {
            let mut cells = vec![
                Cell::Text(p.paraphrase_id.clone()),
                Cell::Text(p.token_labels.join("|")),
            ];
            cells.extend(metric_cells(&p.record));
            t.rows.push(cells);
        }
        t
    }

    pub fn render(&self, format: TableFormat) -> String {
        let mut out = String::new();
        match format {
            TableFormat::Csv => {
                let header: Vec<String> = self.columns.iter().map(|c| Cell::Text(c.clone()).csv()).collect();
                out.push_str(&header.join(","));
                out.push('\n');
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(Cell::csv).collect();
                    out.push_str(&cells.join(","));
                    out.push('\n');
                }
            }
            TableFormat::Json => {
                out.push('[');
                for (i, row) in self.rows.iter().enumerate() {
                    out.push_str(if i == 0 { "\n  {" } else { ",\n  {" });
                    for (j, (col, cell)) in self.columns.iter().zip(row).enumerate() {
                        if j > 0 {
                            out.push_str(", ");
                        }
                        let key = serde_json::to_string(col).expect("string serializes");
                        let _ = write!(out, "{key}: {}", cell.json());
                    }
                    out.push('}');
                }
                out.push_str(if self.rows.is_empty() { "]\n" } else { "\n]\n" });
            }
        }
        out
    }
}

fn metric_cells(r: &MetricsRecord) -> Vec<Cell> {
    vec![
        Cell::Int(r.layer as i64),
        Cell::Text(r.probe_kind.as_str().to_string()),
        Cell::opt(r.f1_gt),
        Cell::Num(r.f1_llm),
        Cell::Num(r.d_kl),
        Cell::opt(r.css),
    ]
}

/// Writes each table to `<dir>/<name>.<ext>` atomically and returns the
/// paths in input order.
pub fn emit_tables(tables: &[Table], format: TableFormat, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if tables.is_empty() || tables.iter().all(|t| t.rows.is_empty()) {
        return Err(Error::invalid("no results to emit"));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(tables.len());
    for t in tables {
        let path = dir.join(format!("{}.{}", t.name, format.extension()));
        write_atomic(&path, t.render(format).as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}
