//! Deterministic text output: 17-significant-digit floats, `key=value`
//! summaries, and the shared CSV layout for coefficient tables.
//!
//! Every writer emits rows in a fixed order so identical runs produce
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use num_complex::Complex64 as C64;

use crate::error::Result;

/// Format with 17 significant digits, enough to round-trip any f64.
pub fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

/// One `key=value` line per entry, in the given order.
pub fn write_summary(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        let _ = writeln!(out, "{k}={v}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Shared CSV layout: one row per (degree, multi-index, component).
///
/// `multi_index` is the exponent vector joined by `.` (empty for scalar
/// tables); indices may be negative for Laurent data. The header fixes the
/// column order.
pub const CSV_HEADER: &str = "degree,multi_index,component,re,im";

pub struct CsvTable {
    rows: Vec<(i64, Vec<i64>, usize, C64)>,
}

impl CsvTable {
    pub fn new() -> Self {
        CsvTable { rows: Vec::new() }
    }

    pub fn push(&mut self, degree: i64, multi_index: &[i64], component: usize, value: C64) {
        self.rows.push((degree, multi_index.to_vec(), component, value));
    }

    pub fn to_string(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for (degree, mi, comp, v) in &self.rows {
            let mi_str = mi
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join(".");
            let _ = writeln!(
                out,
                "{degree},{mi_str},{comp},{},{}",
                fmt_f64(v.re),
                fmt_f64(v.im)
            );
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string())?;
        Ok(())
    }

    /// Parse a table previously produced by `to_string`.
    pub fn parse(text: &str) -> Result<Vec<(i64, Vec<i64>, usize, C64)>> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 {
                if line.trim() != CSV_HEADER {
                    return Err(crate::Error::Config(format!(
                        "unexpected CSV header: {line}"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 5 {
                return Err(crate::Error::Config(format!(
                    "CSV row {lineno}: expected 5 columns, got {}",
                    parts.len()
                )));
            }
            let degree: i64 = parts[0]
                .trim()
                .parse()
                .map_err(|e| crate::Error::Config(format!("CSV row {lineno} degree: {e}")))?;
            let mi: Vec<i64> = if parts[1].trim().is_empty() {
                Vec::new()
            } else {
                parts[1]
                    .split('.')
                    .map(|s| {
                        s.trim().parse().map_err(|e| {
                            crate::Error::Config(format!("CSV row {lineno} multi_index: {e}"))
                        })
                    })
                    .collect::<Result<Vec<i64>>>()?
            };
            let comp: usize = parts[2]
                .trim()
                .parse()
                .map_err(|e| crate::Error::Config(format!("CSV row {lineno} component: {e}")))?;
            let re: f64 = parts[3]
                .trim()
                .parse()
                .map_err(|e| crate::Error::Config(format!("CSV row {lineno} re: {e}")))?;
            let im: f64 = parts[4]
                .trim()
                .parse()
                .map_err(|e| crate::Error::Config(format!("CSV row {lineno} im: {e}")))?;
            rows.push((degree, mi, comp, C64::new(re, im)));
        }
        Ok(rows)
    }
}

impl Default for CsvTable {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        for &x in &[
            0.1,
            -1.0 / 3.0,
            std::f64::consts::PI,
            1.2345678901234567e-300,
            6.02214076e23,
        ] {
            let s = fmt_f64(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back, x, "{s}");
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut t = CsvTable::new();
        t.push(3, &[2, 0, 1], 0, C64::new(0.1, -0.25));
        t.push(-2, &[-2], 1, C64::new(1.0 / 3.0, 7.5e-12));
        let text = t.to_string();
        let rows = CsvTable::parse(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].0, 3);
        assert_eq!(rows[0].1, vec![2, 0, 1]);
        assert_eq!(rows[1].1, vec![-2]);
        assert_eq!(rows[0].3, C64::new(0.1, -0.25));
        assert_eq!(rows[1].3, C64::new(1.0 / 3.0, 7.5e-12));
    }
}
