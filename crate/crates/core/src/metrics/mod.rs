//! Confusion matrices and per-class / macro classification reports.

pub mod heatmap;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use heatmap::render_heatmap;

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub class_names: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Self {
        let c = class_names.len();
        Self {
            class_names,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// Adds one prediction, checking indices.
    pub fn record(&mut self, label: usize, pred: usize) -> Result<()> {
        let classes = self.num_classes();
        for index in [label, pred] {
            if index >= classes {
                return Err(Error::IndexOutOfRange { index, classes });
            }
        }
        self.counts[label][pred] += 1;
        Ok(())
    }

    /// Elementwise sum with a matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(Error::shape("confusion merge", &[self.num_classes()], &[other.num_classes()]));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for name in &self.class_names {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            out.push_str(name);
            for v in row {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// `counts[i][j] = #{k : labels[k] = i and preds[k] = j}`.
pub fn confusion(preds: &[usize], labels: &[usize], class_names: &[String]) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut m = ConfusionMatrix::new(class_names.to_vec());
    for (&p, &l) in preds.iter().zip(labels) {
        m.record(l, p)?;
    }
    Ok(m)
}

/// Class names `class_0 .. class_{C-1}` for anonymous matrices.
pub fn numbered_classes(c: usize) -> Vec<String> {
    (0..c).map(|i| format!("class_{i}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub support: u64,
    /// Equal to recall: the fraction of this class's samples classified correctly.
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// No predictions of this class, so precision is reported as 0.
    pub degenerate_precision: bool,
    /// No samples of this class, so recall is reported as 0.
    pub degenerate_recall: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub matrix: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Per-class precision, recall and F1 plus their unweighted class means.
pub fn classification_report(matrix: &ConfusionMatrix) -> Result<EvalReport> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let c = matrix.num_classes();
    let per_class: Vec<ClassMetrics> = (0..c)
        .map(|j| {
            let tp = matrix.counts[j][j];
            let support = matrix.row_sum(j);
            let (precision, degenerate_precision) = ratio(tp, matrix.col_sum(j));
            let (recall, degenerate_recall) = ratio(tp, support);
            ClassMetrics {
                name: matrix.class_names[j].clone(),
                support,
                accuracy: recall,
                precision,
                recall,
                f1: f1_score(precision, recall),
                degenerate_precision,
                degenerate_recall,
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / c as f64;
    Ok(EvalReport {
        accuracy: matrix.trace() as f64 / total as f64,
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        per_class,
        matrix: matrix.clone(),
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Fixed-width table: one row per class, then accuracy and macro averages.
    pub fn table(&self) -> String {
        let width = self
            .per_class
            .iter()
            .map(|m| m.name.len())
            .max()
            .unwrap_or(5)
            .max("macro avg".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>9}  {:>7}",
            "class", "accuracy", "precision", "recall", "f1", "support"
        );
        for m in &self.per_class {
            let mark = if m.degenerate_precision || m.degenerate_recall { " *" } else { "" };
            let _ = writeln!(
                out,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}{mark}",
                m.name, m.accuracy, m.precision, m.recall, m.f1, m.support
            );
        }
        let total = self.matrix.total();
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<width$}  {:>9.4}  {:>9}  {:>9}  {:>9}  {:>7}", "accuracy", self.accuracy, "", "", "", total);
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
            "macro avg", "", self.macro_precision, self.macro_recall, self.macro_f1, total
        );
        if self.per_class.iter().any(|m| m.degenerate_precision || m.degenerate_recall) {
            let _ = writeln!(out, "* zero denominator, metric reported as 0");
        }
        out
    }
}
