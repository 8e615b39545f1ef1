//! The ablation matrix: named config patches over the baseline run, each
//! trained and evaluated independently on the same split.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::{split_hash, DatasetManifest};
use crate::pipeline::{train_and_evaluate, DataCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationAxis {
    pub name: String,
    /// Dotted config keys and their replacement values.
    pub patch: Vec<(String, Value)>,
}

impl AblationAxis {
    pub fn new(name: &str, patch: &[(&str, Value)]) -> Self {
        Self {
            name: name.into(),
            patch: patch.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    pub fn keys(&self) -> Vec<&str> {
        self.patch.iter().map(|(k, _)| k.as_str()).collect()
    }

    /// The patched config and the values it replaced, for [`revert`].
    pub fn apply(&self, base: &RunConfig) -> Result<(RunConfig, Vec<(String, Value)>)> {
        let mut cfg = base.clone();
        let mut previous = Vec::with_capacity(self.patch.len());
        for (key, value) in &self.patch {
            let old = base
                .get(key)
                .ok_or_else(|| Error::Config(format!("ablation {:?}: unknown key {key:?}", self.name)))?;
            cfg.set(key, value.clone())?;
            previous.push((key.clone(), old));
        }
        Ok((cfg, previous))
    }
}

/// Restores the values an [`AblationAxis::apply`] replaced.
pub fn revert(cfg: &RunConfig, previous: &[(String, Value)]) -> Result<RunConfig> {
    let mut out = cfg.clone();
    for (key, value) in previous.iter().rev() {
        out.set(key, value.clone())?;
    }
    Ok(out)
}

pub const BASELINE: &str = "Baseline";

/// The nine rows in their published order, baseline first.
pub fn standard_matrix() -> Vec<AblationAxis> {
    vec![
        AblationAxis::new(BASELINE, &[]),
        AblationAxis::new("Reduce Number of Frames from 32 to 16", &[("preprocess.frames", json!(16))]),
        AblationAxis::new("Remove Transformer Encoder Layers (2 Layers)", &[("seq.num_layers", json!(2))]),
        AblationAxis::new("Remove Transformer Encoder Layers (1 Layer)", &[("seq.num_layers", json!(1))]),
        AblationAxis::new(
            "Replace Bidirectional LSTM with Unidirectional LSTM",
            &[("seq.bidirectional", json!(false))],
        ),
        AblationAxis::new(
            "Using Randomly Initialized ResNet-18 Instead of Pretrained",
            &[("backbone.pretrained", json!(false))],
        ),
        AblationAxis::new("Increase Transformer Attention Heads from 8 to 16", &[("seq.num_heads", json!(16))]),
        AblationAxis::new("Disable Data Augmentations", &[("preprocess.augment", json!(false))]),
        AblationAxis::new("Replace ResNet-18 with ResNet-50", &[("backbone.variant", json!("resnet50"))]),
    ]
}

/// Rows of [`standard_matrix`] whose names contain any of `filters`
/// (case-insensitive); the baseline is always kept.
pub fn select_rows(matrix: &[AblationAxis], filters: &[&str]) -> Vec<AblationAxis> {
    matrix
        .iter()
        .filter(|a| {
            a.name == BASELINE
                || filters
                    .iter()
                    .any(|f| a.name.to_lowercase().contains(&f.to_lowercase()))
        })
        .cloned()
        .collect()
}

/// Dotted paths of every leaf value that differs between two configs.
pub fn changed_keys(a: &RunConfig, b: &RunConfig) -> Vec<String> {
    fn walk(prefix: &str, a: &Value, b: &Value, out: &mut Vec<String>) {
        match (a, b) {
            (Value::Object(ma), Value::Object(mb)) => {
                let mut keys: Vec<&String> = ma.keys().chain(mb.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&path, ma.get(k).unwrap_or(&Value::Null), mb.get(k).unwrap_or(&Value::Null), out);
                }
            }
            _ if a != b => out.push(prefix.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk("", &a.to_json(), &b.to_json(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    /// Test-split accuracy and macro F1 of the best checkpoint, as fractions.
    pub accuracy: f64,
    pub macro_f1: f64,
    pub val_accuracy: f64,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub runtime_seconds: f64,
    pub split_hash: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, name: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "experiment",
            "accuracy",
            "macro_f1",
            "val_accuracy",
            "best_val_loss",
            "epochs_run",
            "runtime_seconds",
            "split_hash",
            "error",
        ])
        .expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.name.clone(),
                format!("{:.6}", r.accuracy),
                format!("{:.6}", r.macro_f1),
                format!("{:.6}", r.val_accuracy),
                format!("{:.6}", r.best_val_loss),
                r.epochs_run.to_string(),
                format!("{:.1}", r.runtime_seconds),
                r.split_hash.clone(),
                r.error.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }

    /// Experiment, accuracy and F1 in percent, one row per experiment.
    pub fn table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(10).max(10);
        let mut out = format!("{:<width$}  {:>12}  {:>12}\n", "Experiment", "Accuracy (%)", "F1-Score (%)");
        for r in &self.rows {
            match &r.error {
                None => writeln!(out, "{:<width$}  {:>12.2}  {:>12.2}", r.name, 100.0 * r.accuracy, 100.0 * r.macro_f1),
                Some(e) => writeln!(out, "{:<width$}  failed: {e}", r.name),
            }
            .expect("string write");
        }
        out
    }
}

/// Budget overrides applied to every row, for desk-scale runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationBudget {
    pub epochs: Option<usize>,
    pub max_batches_per_epoch: Option<usize>,
}

/// Trains every row on the same split. A failing row is recorded with its
/// error and the run continues. With `out_dir`, each row's history and
/// checkpoint go to a numbered subdirectory.
pub fn run_ablation(
    base: &RunConfig,
    matrix: &[AblationAxis],
    manifest: &DatasetManifest,
    budget: &AblationBudget,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    let mut base = base.clone();
    if let Some(e) = budget.epochs {
        base.train.epochs = e;
        base.train.patience = base.train.patience.min(e);
    }
    if budget.max_batches_per_epoch.is_some() {
        base.train.max_batches_per_epoch = budget.max_batches_per_epoch;
    }
    let hash = split_hash(manifest)?;
    let mut cache = DataCache::new();
    let mut rows = Vec::with_capacity(matrix.len());
    for (i, axis) in matrix.iter().enumerate() {
        let row_dir = out_dir.map(|d| d.join(format!("{i:02}")));
        let outcome = axis
            .apply(&base)
            .and_then(|(cfg, _)| train_and_evaluate(&cfg, manifest, &mut cache, row_dir.as_deref()));
        rows.push(match outcome {
            Ok((_, r)) => AblationRow {
                name: axis.name.clone(),
                accuracy: r.test.accuracy,
                macro_f1: r.test.macro_f1,
                val_accuracy: r.val_accuracy,
                best_val_loss: r.best_val_loss,
                epochs_run: r.history.len(),
                runtime_seconds: r.runtime_seconds,
                split_hash: hash.clone(),
                error: None,
            },
            Err(e) => AblationRow {
                name: axis.name.clone(),
                accuracy: f64::NAN,
                macro_f1: f64::NAN,
                val_accuracy: f64::NAN,
                best_val_loss: f64::NAN,
                epochs_run: 0,
                runtime_seconds: 0.0,
                split_hash: hash.clone(),
                error: Some(e.to_string()),
            },
        });
    }
    Ok(AblationReport { rows })
}
