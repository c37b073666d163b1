use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Label of the column that carries published reference values.
pub const REFERENCE_LABEL: &str = "paper (WMT16 En-Ro)";

/// Metric values of one seed; `None` marks an absent cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedCells {
    pub seed: u64,
    pub cells: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub per_seed: Vec<SeedCells>,
    /// Published values, one per metric column, shown side by side.
    pub reference: Option<Vec<f64>>,
}

impl ReportRow {
    pub fn new(label: impl Into<String>) -> Self {
        ReportRow {
            label: label.into(),
            per_seed: Vec::new(),
            reference: None,
        }
    }
}

/// Median of the present values; `None` when there are none.
pub fn median(values: &[Option<f64>]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// A table of systems by metrics, aggregated over seeds by the median.
/// Deltas are never stored; they are recomputed from the medians against
/// the baseline row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub baseline: usize,
    /// Metric column the Δ column is computed on, if any.
    pub delta_column: Option<usize>,
    pub notes: Vec<String>,
}

impl ReportTable {
    pub fn new(title: impl Into<String>, columns: &[&str], delta_column: Option<usize>) -> Self {
        ReportTable {
            title: title.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            baseline: 0,
            delta_column,
            notes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ExperimentConfig(format!("report `{}`: {m}", self.title)));
        if self.rows.is_empty() {
            return bad("no rows".into());
        }
        if self.baseline >= self.rows.len() {
            return bad(format!("baseline row {} out of range", self.baseline));
        }
        if self.delta_column.is_some_and(|c| c >= self.columns.len()) {
            return bad("delta column out of range".into());
        }
        for r in &self.rows {
            if r.per_seed.iter().any(|s| s.cells.len() != self.columns.len()) {
                return bad(format!("row `{}` has the wrong number of cells", r.label));
            }
            if r.reference.as_ref().is_some_and(|v| v.len() != self.columns.len()) {
                return bad(format!("row `{}` has the wrong number of reference values", r.label));
            }
        }
        Ok(())
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Median over seeds of every metric cell of `row`.
    pub fn medians(&self, row: usize) -> Vec<Option<f64>> {
        (0..self.columns.len())
            .map(|c| {
                let v: Vec<Option<f64>> = self.rows[row].per_seed.iter().map(|s| s.cells[c]).collect();
                median(&v)
            })
            .collect()
    }

    pub fn median_of(&self, label: &str, column: usize) -> Option<f64> {
        let i = self.rows.iter().position(|r| r.label == label)?;
        self.medians(i)[column]
    }

    /// `cell(row) - cell(baseline)`; `None` on the baseline row itself.
    pub fn delta(&self, row: usize) -> Option<f64> {
        let c = self.delta_column?;
        if row == self.baseline {
            return None;
        }
        Some(self.medians(row)[c]? - self.medians(self.baseline)[c]?)
    }

    fn has_reference(&self) -> bool {
        self.rows.iter().any(|r| r.reference.is_some())
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["system".to_string()];
        h.extend(self.columns.iter().cloned());
        if let Some(c) = self.delta_column {
            h.push(format!("Δ {}", self.columns[c]));
        }
        if self.has_reference() {
            h.push(format!("{REFERENCE_LABEL} {}", self.columns.join("/")));
        }
        h
    }

    fn cells(&self, row: usize, fmt: &dyn Fn(f64) -> String, signed: &dyn Fn(f64) -> String) -> Vec<String> {
        let r = &self.rows[row];
        let mut out = vec![r.label.clone()];
        out.extend(self.medians(row).into_iter().map(|v| v.map_or_else(|| "-".to_string(), fmt)));
        if self.delta_column.is_some() {
            out.push(self.delta(row).map_or_else(|| "-".to_string(), signed));
        }
        if self.has_reference() {
            out.push(match &r.reference {
                Some(v) => v.iter().map(|x| format!("{x:.1}")).collect::<Vec<_>>().join("/"),
                None => "-".to_string(),
            });
        }
        out
    }

    /// Aligned plain-text table with one decimal, followed by per-seed
    /// detail and notes.
    pub fn to_text(&self) -> String {
        let mut lines = vec![self.header()];
        for i in 0..self.rows.len() {
            lines.push(self.cells(i, &|x| format!("{x:.1}"), &|x| format!("{x:+.1}")));
        }
        let ncol = lines[0].len();
        let widths: Vec<usize> = (0..ncol).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut s = format!("{}\n", self.title);
        for (k, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, v)| {
                    let pad = widths[c] - v.chars().count();
                    if c == 0 {
                        format!("{v}{}", " ".repeat(pad))
                    } else {
                        format!("{}{v}", " ".repeat(pad))
                    }
                })
                .collect();
            let _ = writeln!(s, "{}", cells.join("  ").trim_end());
            if k == 0 {
                let _ = writeln!(s, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (ncol - 1)));
            }
        }
        let seeds: Vec<String> = self.rows[0].per_seed.iter().map(|s| s.seed.to_string()).collect();
        let _ = writeln!(s, "median over seeds {}", seeds.join(", "));
        for r in &self.rows {
            for sc in &r.per_seed {
                let v: Vec<String> = sc.cells.iter().map(|c| c.map_or_else(|| "-".to_string(), |x| format!("{x:.1}"))).collect();
                let _ = writeln!(s, "  seed {} {}: {}", sc.seed, r.label, v.join(" / "));
            }
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }

    /// Tab-separated medians at full precision, then one line per
    /// (system, seed).
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.header().join("\t"));
        for i in 0..self.rows.len() {
            let full = |x: f64| x.to_string();
            let _ = writeln!(s, "{}", self.cells(i, &full, &full).join("\t"));
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "system\tseed\t{}", self.columns.join("\t"));
        for r in &self.rows {
            for sc in &r.per_seed {
                let v: Vec<String> = sc.cells.iter().map(|c| c.map_or_else(|| "-".to_string(), |x| x.to_string())).collect();
                let _ = writeln!(s, "{}\t{}\t{}", r.label, sc.seed, v.join("\t"));
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let t: ReportTable = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    /// Hex SHA-256 of the JSON form; equal digests mean equal metrics.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> ReportTable {
        let mut t = ReportTable::new("probe", &["BLEU"], Some(0));
        for (label, vals, r) in [("NN", [10.0, 12.0, 11.0], 33.7), ("YY", [15.0, 13.0, 20.0], 37.7)] {
            let mut row = ReportRow::new(label);
            row.per_seed = vals
                .iter()
                .enumerate()
                .map(|(i, &v)| SeedCells {
                    seed: i as u64 + 1,
                    cells: vec![Some(v)],
                })
                .collect();
            row.reference = Some(vec![r]);
            t.rows.push(row);
        }
        t
    }

    #[test]
    fn median_handles_even_and_absent() {
        assert_eq!(median(&[Some(3.0), None, Some(1.0)]), Some(2.0));
        assert_eq!(median(&[None]), None);
        assert_eq!(median(&[Some(5.0), Some(1.0), Some(2.0)]), Some(2.0));
    }

    #[test]
    fn delta_against_baseline() {
        let t = table();
        assert_eq!(t.delta(0), None);
        assert_eq!(t.delta(1), Some(4.0));
        let text = t.to_text();
        assert!(text.contains(REFERENCE_LABEL));
        assert!(text.contains("+4.0"));
        assert!(t.to_tsv().starts_with("system\tBLEU\tΔ BLEU"));
    }

    #[test]
    fn json_round_trip() {
        let t = table();
        let back = ReportTable::parse_json(&t.to_json()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.digest(), t.digest());
        let mut bad = t.clone();
        bad.baseline = 9;
        assert!(ReportTable::parse_json(&bad.to_json()).is_err());
    }
}
