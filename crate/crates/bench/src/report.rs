//! Result tables: one row per scheme, dataset and iteration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};
use volprompt_core::metrics::{aggregate, read_records_csv, AggregateLevel, AggregationOrder, EvaluationRecord};

use crate::error::{BenchError, Result};
use crate::runner::{RunManifest, RECORDS_CSV, RUN_MANIFEST};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scheme: String,
    pub dataset: String,
    pub iteration: u32,
    /// Printed cost, e.g. `6` or `1x/3`; empty when unknown.
    pub notation: String,
    pub mean_interactions: f64,
    pub mean_dsc: Option<f64>,
    pub n_missing: usize,
    /// Last iteration: the number to report.
    pub is_final: bool,
    /// Iteration with the highest mean DSC. Shown for reference only.
    pub is_best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// Dataset-level means per scheme and iteration.
pub fn build_report(
    records: &[EvaluationRecord],
    notations: &BTreeMap<String, String>,
    order: AggregationOrder,
) -> Report {
    let mut rows: Vec<ReportRow> = aggregate(records, order)
        .into_iter()
        .filter(|r| r.level == AggregateLevel::Dataset)
        .map(|r| ReportRow {
            notation: notations.get(&r.scheme).cloned().unwrap_or_default(),
            dataset: r.dataset.unwrap_or_default(),
            scheme: r.scheme,
            iteration: r.iteration,
            mean_interactions: r.mean_interactions,
            mean_dsc: r.mean_dsc,
            n_missing: r.n_missing,
            is_final: false,
            is_best: false,
        })
        .collect();
    let mut groups: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        groups.entry((r.scheme.clone(), r.dataset.clone())).or_default().push(i);
    }
    for idx in groups.values() {
        let last = *idx.iter().max_by_key(|&&i| rows[i].iteration).expect("non-empty");
        rows[last].is_final = true;
        // highest mean, earliest iteration on ties
        let best = idx
            .iter()
            .copied()
            .filter(|&i| rows[i].mean_dsc.is_some())
            .fold(None::<usize>, |b, i| match b {
                Some(b) if rows[b].mean_dsc >= rows[i].mean_dsc => Some(b),
                _ => Some(i),
            });
        if let Some(b) = best {
            rows[b].is_best = true;
        }
    }
    Report { rows }
}

fn fmt_dsc(d: Option<f64>) -> String {
    d.map_or_else(|| "NaN".into(), |v| format!("{v:.4}"))
}

fn fmt_interactions(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

impl Report {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| BenchError::io(path, e))?;
        let mut w = csv::Writer::from_writer(f);
        let err = |e: csv::Error| BenchError::Config(format!("csv: {e}"));
        w.write_record([
            "scheme",
            "dataset",
            "iteration",
            "notation",
            "interactions",
            "mean_dsc",
            "n_missing",
            "final",
            "best",
        ])
        .map_err(err)?;
        for r in &self.rows {
            w.write_record([
                r.scheme.as_str(),
                &r.dataset,
                &r.iteration.to_string(),
                &r.notation,
                &r.mean_interactions.to_string(),
                &r.mean_dsc.map_or_else(|| "NaN".into(), |v| v.to_string()),
                &r.n_missing.to_string(),
                &r.is_final.to_string(),
                &r.is_best.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| BenchError::io(path, e))
    }

    /// Headline table (final iteration) followed by the per-iteration
    /// series of every scheme that refines.
    pub fn to_text(&self) -> String {
        let mut table = vec![vec![
            "Prompter".to_string(),
            "Dataset".into(),
            "Interactions".into(),
            "Mean clicks".into(),
            "DSC (final)".into(),
            "Best DSC (iter)".into(),
            "Missing".into(),
        ]];
        for r in self.rows.iter().filter(|r| r.is_final) {
            let best = self
                .rows
                .iter()
                .find(|b| b.is_best && b.scheme == r.scheme && b.dataset == r.dataset);
            table.push(vec![
                r.scheme.clone(),
                r.dataset.clone(),
                r.notation.clone(),
                fmt_interactions(r.mean_interactions),
                fmt_dsc(r.mean_dsc),
                best.map_or_else(|| "-".into(), |b| format!("{} ({})", fmt_dsc(b.mean_dsc), b.iteration)),
                r.n_missing.to_string(),
            ]);
        }
        let mut out = align(&table);
        let series: Vec<&ReportRow> = self
            .rows
            .iter()
            .filter(|r| self.rows.iter().any(|o| o.scheme == r.scheme && o.dataset == r.dataset && o.iteration > 0))
            .collect();
        if !series.is_empty() {
            out.push('\n');
            let mut t = vec![vec![
                "Prompter".to_string(),
                "Dataset".into(),
                "Iteration".into(),
                "Interactions".into(),
                "DSC".into(),
            ]];
            for r in series {
                t.push(vec![
                    r.scheme.clone(),
                    r.dataset.clone(),
                    r.iteration.to_string(),
                    fmt_interactions(r.mean_interactions),
                    fmt_dsc(r.mean_dsc),
                ]);
            }
            out.push_str(&align(&t));
        }
        out
    }
}

fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut widths = vec![0usize; cols];
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * cols.saturating_sub(1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

/// Rebuild the tables of a results directory and write `report.csv` and
/// `report.txt` next to the records.
pub fn report_dir(dir: &Path, order: AggregationOrder) -> Result<Report> {
    let path = dir.join(RECORDS_CSV);
    let f = File::open(&path).map_err(|_| BenchError::EmptyResults(dir.to_path_buf()))?;
    let records = read_records_csv(f)?;
    if records.is_empty() {
        return Err(BenchError::EmptyResults(dir.to_path_buf()));
    }
    let notations: BTreeMap<String, String> = std::fs::read_to_string(dir.join(RUN_MANIFEST))
        .ok()
        .and_then(|t| serde_json::from_str::<RunManifest>(&t).ok())
        .map(|m| m.schemes.into_iter().map(|s| (s.label, s.notation)).collect())
        .unwrap_or_default();
    let report = build_report(&records, &notations, order);
    report.write_csv(&dir.join(REPORT_CSV))?;
    let txt = dir.join(REPORT_TXT);
    std::fs::write(&txt, report.to_text()).map_err(|e| BenchError::io(&txt, e))?;
    Ok(report)
}
