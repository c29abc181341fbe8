//! Tabular results and their CSV / JSON renderings.

use std::fmt::Write as _;

use bgwcoal::report::{fmt_num, CoalescenceReport, CSV_HEADER};
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => fmt_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(v) => json!(fmt_num(*v)),
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }

    fn is_nan(&self) -> bool {
        matches!(self, Cell::Num(v) if v.is_nan())
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&'static str]) -> Self {
        Table {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn from_report(report: &CoalescenceReport) -> Self {
        let mut table = Table::new(&CSV_HEADER.split(',').collect::<Vec<_>>());
        for r in &report.rows {
            table.push(vec![
                r.quantity.clone().into(),
                r.analytic.into(),
                r.empirical.into(),
                r.se.into(),
                r.z_score.into(),
                Cell::Bool(r.pass),
            ]);
        }
        table
    }

    /// Name of the first column holding a NaN, if any.
    pub fn nan_location(&self) -> Option<String> {
        self.rows.iter().find_map(|row| {
            row.iter()
                .position(Cell::is_nan)
                .map(|i| format!("{} in row starting {:?}", self.columns[i], row[0].csv()))
        })
    }
}

/// Provenance written alongside every result.
pub struct Provenance<'a> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: Option<u64>,
    pub config: &'a Value,
}

pub fn render_csv(table: &Table, meta: &Provenance) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# bgwcoal {}", meta.version);
    let _ = writeln!(out, "# command: {}", meta.command);
    if let Some(seed) = meta.seed {
        let _ = writeln!(out, "# seed: {seed}");
    }
    let _ = writeln!(out, "# config: {}", meta.config);
    out.push_str(&table.columns.join(","));
    out.push('\n');
    for row in &table.rows {
        let cells: Vec<String> = row.iter().map(Cell::csv).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn render_json(table: &Table, meta: &Provenance) -> String {
    let rows: Vec<Value> = table
        .rows
        .iter()
        .map(|row| {
            let obj: serde_json::Map<String, Value> = table
                .columns
                .iter()
                .zip(row)
                .map(|(c, v)| (c.to_string(), v.json()))
                .collect();
            Value::Object(obj)
        })
        .collect();
    let doc = json!({
        "version": meta.version,
        "command": meta.command,
        "seed": meta.seed,
        "config": meta.config,
        "columns": table.columns,
        "rows": rows,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("JSON values always serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinity_is_a_token() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![1.5.into(), f64::INFINITY.into()]);
        let cfg = json!({});
        let meta = Provenance {
            command: "x",
            version: "0",
            seed: None,
            config: &cfg,
        };
        assert!(render_csv(&t, &meta).ends_with("a,b\n1.5000000000000000e0,inf\n"));
        assert!(render_json(&t, &meta).contains("\"b\": \"inf\""));
        assert!(t.nan_location().is_none());
        t.push(vec![f64::NAN.into(), 0.0.into()]);
        assert!(t.nan_location().is_some());
    }
}
