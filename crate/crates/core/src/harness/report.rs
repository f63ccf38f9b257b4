//! Baseline-vs-variant comparison in percentage points.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::eval::EvalResult;
use crate::error::{Error, Result};

/// Signed value with one decimal, never `-0.0`.
pub fn format_signed(value: f64) -> String {
    let r = (value * 10.0).round() / 10.0 + 0.0;
    format!("{r:+.1}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub name: String,
    pub n: usize,
    /// Accuracies in percent.
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    pub delta_points: f64,
    /// `None` when run A scored zero.
    pub relative_percent: Option<f64>,
    pub delta_display: String,
    pub relative_display: String,
}

impl DeltaRow {
    pub fn new(name: &str, n: usize, accuracy_a: f64, accuracy_b: f64) -> Self {
        let (a, b) = (accuracy_a * 100.0, accuracy_b * 100.0);
        let delta = b - a;
        let relative = (a != 0.0).then(|| delta / a * 100.0);
        DeltaRow {
            name: name.to_string(),
            n,
            accuracy_a: a,
            accuracy_b: b,
            delta_points: delta,
            relative_percent: relative,
            delta_display: format_signed(delta),
            relative_display: relative.map_or_else(|| "n/a".to_string(), |r| format!("{}%", format_signed(r))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flip {
    pub item_id: String,
    pub correct_a: bool,
    pub correct_b: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub run_a: String,
    pub run_b: String,
    pub config_a: serde_json::Value,
    pub config_b: serde_json::Value,
    pub overall: DeltaRow,
    pub buckets: Vec<DeltaRow>,
    pub flipped: Vec<Flip>,
}

impl ComparisonReport {
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} (a) vs {} (b)", self.run_a, self.run_b);
        let _ = writeln!(
            out,
            "{:<14} {:>6} {:>8} {:>8} {:>7} {:>8}",
            "bucket", "n", "a", "b", "delta", "rel"
        );
        for row in self.buckets.iter().chain(std::iter::once(&self.overall)) {
            let _ = writeln!(
                out,
                "{:<14} {:>6} {:>8.1} {:>8.1} {:>7} {:>8}",
                row.name, row.n, row.accuracy_a, row.accuracy_b, row.delta_display, row.relative_display
            );
        }
        let gained = self.flipped.iter().filter(|f| f.correct_b).count();
        let _ = writeln!(
            out,
            "flipped: {} ({} gained, {} lost)",
            self.flipped.len(),
            gained,
            self.flipped.len() - gained
        );
        out
    }
}

fn correctness(r: &EvalResult) -> HashMap<&str, bool> {
    r.predictions
        .iter()
        .map(|p| (p.item_id.as_str(), p.error.is_none() && p.correct))
        .collect()
}

/// Deltas are `b - a`.
pub fn compare_runs(a: &EvalResult, b: &EvalResult) -> Result<ComparisonReport> {
    let ca = correctness(a);
    let cb = correctness(b);
    let ids_a: HashSet<&str> = ca.keys().copied().collect();
    let ids_b: HashSet<&str> = cb.keys().copied().collect();
    if ids_a != ids_b || a.n != b.n {
        let only_a = ids_a.difference(&ids_b).count();
        let only_b = ids_b.difference(&ids_a).count();
        return Err(Error::Report(format!(
            "runs cover different items ({only_a} only in `{}`, {only_b} only in `{}`)",
            a.run_id, b.run_id
        )));
    }

    let mut buckets = Vec::new();
    for (name, sa) in &a.accuracy_by_bucket {
        let acc_b = b.accuracy_by_bucket.get(name).map_or(0.0, |s| s.accuracy);
        buckets.push(DeltaRow::new(name, sa.n, sa.accuracy, acc_b));
    }
    for (name, sb) in &b.accuracy_by_bucket {
        if !a.accuracy_by_bucket.contains_key(name) {
            buckets.push(DeltaRow::new(name, sb.n, 0.0, sb.accuracy));
        }
    }

    let flipped = a
        .predictions
        .iter()
        .filter_map(|p| {
            let (x, y) = (ca[p.item_id.as_str()], cb[p.item_id.as_str()]);
            (x != y).then(|| Flip { item_id: p.item_id.clone(), correct_a: x, correct_b: y })
        })
        .collect();

    Ok(ComparisonReport {
        run_a: a.run_id.clone(),
        run_b: b.run_id.clone(),
        config_a: a.config.clone(),
        config_b: b.config.clone(),
        overall: DeltaRow::new("overall", a.n, a.accuracy_overall, b.accuracy_overall),
        buckets,
        flipped,
    })
}
