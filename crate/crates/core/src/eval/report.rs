//! Static report tables: a per-model feature/accuracy grid and a
//! per-method metric comparison.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Classifier, EvalReport, ReportRow, MODEL_MASKS};
use crate::features::FeatureGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            _ => Err(format!("unknown report format {s:?}")),
        }
    }
}

/// Rendered tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub table3: String,
    pub table4: String,
}

const GRID_CLASSIFIERS: [Classifier; 2] = [Classifier::Forest, Classifier::Gbm];

fn pct(v: f64) -> String {
    format!("{v:.2}")
}

fn emit(format: ReportFormat, header: &[String], rows: &[Vec<String>], notes: &[String]) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header).expect("in-memory write");
            for r in rows {
                w.write_record(r).expect("in-memory write");
            }
            out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
        }
        ReportFormat::Markdown => {
            let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
            out.push_str(&line(header));
            let sep: Vec<String> =
                header.iter().enumerate().map(|(i, _)| if i == 0 { "---" } else { "---:" }.into()).collect();
            out.push_str(&line(&sep));
            for r in rows {
                out.push_str(&line(r));
            }
            for n in notes {
                out.push('\n');
                out.push_str(n);
                out.push('\n');
            }
        }
    }
    out
}

/// Model rows in canonical order, with accuracy and F-score for each tree
/// ensemble; cells for missing classifiers are blank.
fn table3(report: &EvalReport, format: ReportFormat) -> String {
    let mut header: Vec<String> = vec!["Model".into()];
    header.extend(FeatureGroup::ALL.iter().map(|g| g.to_string()));
    for c in GRID_CLASSIFIERS {
        header.push(format!("{} Accuracy", c.label()));
        header.push(format!("{} F-score", c.label()));
    }
    let rows: Vec<Vec<String>> = MODEL_MASKS
        .iter()
        .filter_map(|(name, _)| {
            let found: Vec<Option<&ReportRow>> = GRID_CLASSIFIERS.iter().map(|&c| report.row(name, c)).collect();
            let first = found.iter().flatten().next()?;
            let mut r = vec![name.to_string()];
            r.extend(
                FeatureGroup::ALL.iter().map(|&g| if first.model.mask.contains(g) { "✓" } else { "" }.to_string()),
            );
            for row in found {
                match row {
                    Some(row) => {
                        r.push(pct(row.mean.accuracy));
                        r.push(pct(row.mean.f_score));
                    }
                    None => r.extend([String::new(), String::new()]),
                }
            }
            Some(r)
        })
        .collect();
    emit(format, &header, &rows, &[])
}

/// Every report row as a method, in report order. AUC is scaled to percent.
fn table4(report: &EvalReport, format: ReportFormat) -> String {
    let header: Vec<String> = ["Method", "Accuracy", "Precision", "Recall", "F-score", "Macro F-score", "AUC"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            let m = r.mean;
            vec![
                format!("{}-{}", r.classifier.label(), r.model.name),
                pct(m.accuracy),
                pct(m.precision),
                pct(m.recall),
                pct(m.f_score),
                pct(m.macro_f),
                pct(100.0 * m.auc),
            ]
        })
        .collect();
    emit(format, &header, &rows, &report.notes)
}

pub fn render_report(report: &EvalReport, format: ReportFormat) -> RenderedReport {
    RenderedReport { table3: table3(report, format), table4: table4(report, format) }
}
