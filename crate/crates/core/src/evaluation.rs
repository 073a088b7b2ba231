//! Confusion matrices, precision/recall/F1, accuracy and comparison tables.
//!
//! Undefined ratios (a class never predicted, or absent from the labels)
//! are reported as 0.0. Summary tables use unweighted macro averages.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{Label, NUM_CLASSES};
use crate::error::{Error, Result};

/// Version of the [`EvalReport`] JSON layout.
pub const EVAL_SCHEMA_VERSION: u32 = 1;

/// Counts indexed `[true class][predicted class]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|c| self.counts[c][c]).sum()
    }

    /// Examples whose true class is `c`.
    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    /// Examples predicted as `c`.
    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    pub fn support(&self) -> [u64; NUM_CLASSES] {
        std::array::from_fn(|c| self.row_sum(c))
    }
}

pub fn confusion(preds: &[Label], labels: &[Label]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::InvalidData(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidData("no predictions to evaluate".into()));
    }
    let mut m = ConfusionMatrix::default();
    for (p, t) in preds.iter().zip(labels) {
        m.counts[t.index()][p.index()] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn per_class_metrics(m: &ConfusionMatrix) -> [ClassMetrics; NUM_CLASSES] {
    std::array::from_fn(|c| {
        let precision = ratio(m.counts[c][c], m.col_sum(c));
        let recall = ratio(m.counts[c][c], m.row_sum(c));
        ClassMetrics {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    })
}

/// Unweighted mean of each metric over the classes.
pub fn macro_metrics(per_class: &[ClassMetrics]) -> ClassMetrics {
    let n = per_class.len() as f64;
    ClassMetrics {
        precision: per_class.iter().map(|m| m.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|m| m.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|m| m.f1).sum::<f64>() / n,
    }
}

/// Support-weighted mean of each metric; all zeros when support is empty.
pub fn weighted_metrics(per_class: &[ClassMetrics], support: &[u64]) -> ClassMetrics {
    let total: u64 = support.iter().sum();
    if total == 0 {
        return ClassMetrics::default();
    }
    let w = |f: fn(&ClassMetrics) -> f64| {
        per_class
            .iter()
            .zip(support)
            .map(|(m, &s)| f(m) * s as f64)
            .sum::<f64>()
            / total as f64
    };
    ClassMetrics {
        precision: w(|m| m.precision),
        recall: w(|m| m.recall),
        f1: w(|m| m.f1),
    }
}

pub fn accuracy(m: &ConfusionMatrix) -> f64 {
    ratio(m.trace(), m.total())
}

/// Full evaluation of one model on one labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub per_class: [ClassMetrics; NUM_CLASSES],
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    #[serde(rename = "weighted")]
    pub weighted_avg: ClassMetrics,
    pub accuracy: f64,
    pub mean_loss: f64,
    pub support: [u64; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn from_confusion(confusion: ConfusionMatrix, mean_loss: f64) -> Self {
        let per_class = per_class_metrics(&confusion);
        let support = confusion.support();
        Self {
            schema_version: EVAL_SCHEMA_VERSION,
            macro_avg: macro_metrics(&per_class),
            weighted_avg: weighted_metrics(&per_class, &support),
            accuracy: accuracy(&confusion),
            per_class,
            mean_loss,
            support,
            confusion,
        }
    }

    pub fn from_predictions(preds: &[Label], labels: &[Label], mean_loss: f64) -> Result<Self> {
        Ok(Self::from_confusion(confusion(preds, labels)?, mean_loss))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(json)?;
        if report.schema_version != EVAL_SCHEMA_VERSION {
            return Err(Error::InvalidData(format!(
                "unsupported evaluation report version {}",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Per-class table in the style of a classification report.
    pub fn render_per_class(&self) -> String {
        let mut out = format!(
            "{:<20} {:>9} {:>9} {:>9} {:>9}\n",
            "Category", "Precision", "Recall", "F1-Score", "Support"
        );
        for label in Label::ALL {
            let m = self.per_class[label.index()];
            let _ = writeln!(
                out,
                "{:<20} {:>9} {:>9} {:>9} {:>9}",
                label.display_name(),
                fmt_fixed(m.precision, 2),
                fmt_fixed(m.recall, 2),
                fmt_fixed(m.f1, 2),
                self.support[label.index()]
            );
        }
        let _ = writeln!(out, "{:<20} {:>9}", "Accuracy", fmt_fixed(self.accuracy, 3));
        let _ = writeln!(out, "{:<20} {:>9}", "Mean loss", fmt_fixed(self.mean_loss, 3));
        out
    }
}

/// Rounds half away from zero at `decimals` places. A small tolerance absorbs
/// binary representation error, so 0.2865 rounds to 0.287.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let scaled = x.abs() * scale;
    let rounded = (scaled + 0.5 + 1e-9).floor();
    rounded.copysign(x) / scale
}

/// Half-up rounded value with exactly `decimals` fractional digits.
pub fn fmt_fixed(x: f64, decimals: u32) -> String {
    format!("{:.*}", decimals as usize, round_half_up(x, decimals))
}

/// A report labelled for a comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedReport {
    pub model: String,
    pub epochs: usize,
    pub report: EvalReport,
}

pub const COMPARE_COLUMNS: [&str; 7] = [
    "Model",
    "Precision (%)",
    "Recall (%)",
    "F1-Score (%)",
    "Loss",
    "Accuracy (%)",
    "Epochs",
];

/// One rendered comparison row; all cells are final strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub precision: String,
    pub recall: String,
    pub f1: String,
    pub loss: String,
    pub accuracy: String,
    pub epochs: String,
}

impl ComparisonRow {
    fn cells(&self) -> [&str; 7] {
        [
            &self.model,
            &self.precision,
            &self.recall,
            &self.f1,
            &self.loss,
            &self.accuracy,
            &self.epochs,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub rows: Vec<ComparisonRow>,
}

/// Macro precision/recall/F1 as whole percentages, loss to three decimals,
/// accuracy as a percentage to one decimal. Rows keep the input order.
pub fn compare_report(reports: &[NamedReport]) -> Result<ComparisonTable> {
    if reports.is_empty() {
        return Err(Error::InvalidData("nothing to compare".into()));
    }
    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            model: r.model.clone(),
            precision: fmt_fixed(r.report.macro_avg.precision * 100.0, 0),
            recall: fmt_fixed(r.report.macro_avg.recall * 100.0, 0),
            f1: fmt_fixed(r.report.macro_avg.f1 * 100.0, 0),
            loss: fmt_fixed(r.report.mean_loss, 3),
            accuracy: fmt_fixed(r.report.accuracy * 100.0, 1),
            epochs: r.epochs.to_string(),
        })
        .collect();
    Ok(ComparisonTable { rows })
}

impl ComparisonTable {
    /// Column-aligned plain text: model names left-aligned, numbers right.
    pub fn to_text(&self) -> String {
        let mut widths: [usize; 7] = std::array::from_fn(|i| COMPARE_COLUMNS[i].len());
        for row in &self.rows {
            for (w, cell) in widths.iter_mut().zip(row.cells()) {
                *w = (*w).max(cell.len());
            }
        }
        let line = |cells: [&str; 7]| {
            let mut s = String::new();
            for (i, cell) in cells.iter().enumerate() {
                if i == 0 {
                    let _ = write!(s, "{:<w$}", cell, w = widths[i]);
                } else {
                    let _ = write!(s, "  {:>w$}", cell, w = widths[i]);
                }
            }
            s.push('\n');
            s
        };
        let mut out = line(COMPARE_COLUMNS);
        let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row.cells()));
        }
        out
    }

    /// Delimiter-separated rows with a header line.
    pub fn to_delimited(&self, delimiter: u8) -> Result<String> {
        let mut writer = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::InvalidData(format!("table encoding: {e}"));
        writer.write_record(COMPARE_COLUMNS).map_err(csv_err)?;
        for row in &self.rows {
            writer.write_record(row.cells()).map_err(csv_err)?;
        }
        let bytes = writer
            .into_inner()
            .map_err(|e| Error::InvalidData(format!("table encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}
