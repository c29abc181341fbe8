//! Analytic-versus-empirical comparison records.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// z-score bound used for every Monte Carlo comparison.
pub const Z_THRESHOLD: f64 = 3.5;

/// Header of the aggregate CSV.
pub const CSV_HEADER: &str = "quantity,analytic,empirical,se,z_score,pass";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Monte Carlo estimate; `se` is the standard error, pass iff `|z| ≤ 3.5`.
    Statistical,
    /// Deterministic identity; `se` holds the tolerance and `z = deviation / tolerance`,
    /// pass iff `|z| ≤ 1`.
    Tolerance,
    /// Reported value that is not asserted.
    Info,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub quantity: String,
    pub analytic: f64,
    pub empirical: f64,
    pub se: f64,
    pub z_score: f64,
    pub pass: bool,
    pub kind: CheckKind,
}

impl ReportRow {
    pub fn statistical(quantity: impl Into<String>, analytic: f64, empirical: f64, se: f64) -> Self {
        let diff = empirical - analytic;
        let z_score = if se > 0.0 {
            diff / se
        } else if diff == 0.0 {
            0.0
        } else {
            diff.signum() * f64::INFINITY
        };
        ReportRow {
            quantity: quantity.into(),
            analytic,
            empirical,
            se,
            z_score,
            pass: z_score.abs() <= Z_THRESHOLD,
            kind: CheckKind::Statistical,
        }
    }

    pub fn tolerance(quantity: impl Into<String>, expected: f64, observed: f64, tol: f64) -> Self {
        let z_score = (observed - expected) / tol;
        ReportRow {
            quantity: quantity.into(),
            analytic: expected,
            empirical: observed,
            se: tol,
            z_score,
            pass: z_score.abs() <= 1.0,
            kind: CheckKind::Tolerance,
        }
    }

    pub fn info(quantity: impl Into<String>, analytic: f64, empirical: f64) -> Self {
        ReportRow {
            quantity: quantity.into(),
            analytic,
            empirical,
            se: 0.0,
            z_score: 0.0,
            pass: true,
            kind: CheckKind::Info,
        }
    }

    pub fn has_nan(&self) -> bool {
        [self.analytic, self.empirical, self.se, self.z_score]
            .iter()
            .any(|v| v.is_nan())
    }
}

/// A list of comparison rows with an overall verdict.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoalescenceReport {
    pub rows: Vec<ReportRow>,
}

impl CoalescenceReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn extend(&mut self, other: CoalescenceReport) {
        self.rows.extend(other.rows);
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ReportRow> {
        self.rows.iter().filter(|r| !r.pass)
    }

    pub fn find(&self, quantity: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.quantity,
                fmt_num(r.analytic),
                fmt_num(r.empirical),
                fmt_num(r.se),
                fmt_num(r.z_score),
                r.pass
            );
        }
        out
    }
}

/// 17 significant digits, `inf`/`-inf` for infinities; `-0` prints as `0`.
pub fn fmt_num(v: f64) -> String {
    if v == 0.0 {
        format!("{:.16e}", 0.0)
    } else if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.16e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistical_rows() {
        let r = ReportRow::statistical("p", 0.5, 0.52, 0.01);
        assert!((r.z_score - 2.0).abs() < 1e-12);
        assert!(r.pass);
        assert!(!ReportRow::statistical("p", 0.5, 0.54, 0.01).pass);
        let exact = ReportRow::statistical("zero", 0.0, 0.0, 0.0);
        assert!(exact.pass && exact.z_score == 0.0);
        let off = ReportRow::statistical("zero", 0.0, 0.1, 0.0);
        assert!(!off.pass && off.z_score.is_infinite());
    }

    #[test]
    fn csv_formatting() {
        let mut rep = CoalescenceReport::new();
        rep.push(ReportRow::tolerance("conservation", 1.0, 1.0 + 1e-8, 1e-6));
        let csv = rep.to_csv();
        assert!(csv.starts_with(CSV_HEADER));
        assert!(csv.contains("conservation,1.0000000000000000e0,"));
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(0.1), "1.0000000000000001e-1");
        assert_eq!("1.0000000000000001e-1".parse::<f64>().unwrap(), 0.1);
    }
}
