//! The epoch loop: seeded shuffling, AdamW under a cosine schedule, and early
//! stopping on validation loss with the best weights kept.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::model::{Mode, SignTransformer};
use crate::params::ParamSet;
use crate::preprocess::PreprocessConfig;
use crate::scalar::Scalar;

use super::data::ClipSet;
use super::loss::{class_weights, weighted_cross_entropy, ClassWeighting};
use super::optim::{AdamW, AdamWConfig};
use super::schedule::lr_at;

pub const HISTORY_FILE: &str = "history.jsonl";
pub const BEST_CHECKPOINT: &str = "best.safetensors";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub class_weighting: ClassWeighting,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Cap on optimizer steps per epoch, for smoke runs.
    pub max_batches_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 50,
            lr0: 1e-4,
            lr_min: 0.0,
            weight_decay: 1e-2,
            patience: 10,
            seed: 0,
            schedule: Schedule::Cosine,
            class_weighting: ClassWeighting::InverseFrequency,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            max_batches_per_epoch: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("train: {m}")));
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return fail("batch_size, epochs and patience must be positive");
        }
        if self.patience > self.epochs {
            return fail("patience must not exceed epochs");
        }
        if self.lr0 < 0.0 || self.lr_min < 0.0 || self.lr_min > self.lr0 || self.weight_decay < 0.0 {
            return fail("learning rates and weight decay must be non-negative with lr_min <= lr0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps <= 0.0 {
            return fail("AdamW betas must lie in [0, 1) and eps be positive");
        }
        if self.max_batches_per_epoch == Some(0) {
            return fail("max_batches_per_epoch must be positive when set");
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One line of the history file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
}

pub fn history_jsonl(history: &[EpochRecord]) -> String {
    history
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedRow {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub epoch: usize,
    pub step: u64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_since_improvement: usize,
    pub history: Vec<EpochRecord>,
}

pub struct TrainOutcome<S> {
    /// Weights at the lowest validation loss.
    pub best: ParamSet<S>,
    pub state: TrainState,
    pub stopped_early: bool,
    /// Written checkpoint, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

/// Loss, accuracy and predictions of a model on a clip set.
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub probs: Array2<f64>,
}

pub fn evaluate<S: Scalar>(
    model: &SignTransformer<S>,
    set: &ClipSet,
    pre: &PreprocessConfig,
    weights: &Array1<f64>,
    batch_size: usize,
) -> Result<Evaluation> {
    let classes = weights.len();
    let mut probs = Array2::<f64>::zeros((set.len(), classes));
    let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
    let mut predictions = Vec::with_capacity(set.len());
    let order: Vec<usize> = (0..set.len()).collect();
    for chunk in order.chunks(batch_size.max(1)) {
        let clips = set.batch::<S>(chunk, pre, None)?;
        let out = model.forward(clips.view(), Mode::Eval)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i]).collect();
        let loss = weighted_cross_entropy(out.logits.view(), &labels, weights.view())?;
        for (&l, nll) in labels.iter().zip(&loss.per_sample) {
            loss_sum += weights[l] * nll.as_f64();
            weight_sum += weights[l];
        }
        predictions.extend(out.predictions());
        for (row, &i) in chunk.iter().enumerate() {
            probs.row_mut(i).assign(&out.probs.row(row).mapv(|p| p.as_f64()));
        }
    }
    let correct = predictions.iter().zip(&set.labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        loss: if weight_sum > 0.0 { loss_sum / weight_sum } else { 0.0 },
        accuracy: if set.is_empty() { 0.0 } else { correct as f64 / set.len() as f64 },
        predictions,
        probs,
    })
}

fn step_seed(seed: u64, epoch: usize, step: u64) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ step.wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Trains `model` in place and returns the best weights. With `out_dir`,
/// the history file is rewritten after every epoch and the best checkpoint
/// whenever validation loss improves.
pub fn train<S: Scalar>(
    model: &mut SignTransformer<S>,
    train_set: &ClipSet,
    val_set: &ClipSet,
    pre: &PreprocessConfig,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val_set.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }
    let classes = model.config.seq.num_classes;
    let weights = class_weights(&train_set.class_counts(classes), cfg.class_weighting)?;
    let names = model.trainable_names();
    let mut opt = AdamW::new(cfg.adamw());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainState {
        epoch: 0,
        step: 0,
        best_val_loss: f64::INFINITY,
        best_epoch: 0,
        epochs_since_improvement: 0,
        history: Vec::new(),
    };
    let mut best = model.params.clone();
    let mut checkpoint = None;
    let mut stopped_early = false;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for epoch in 0..cfg.epochs {
        state.epoch = epoch;
        let lr = lr_at(epoch, cfg.epochs, cfg.lr0, cfg.lr_min);
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut weight_sum) = (0.0, 0.0);
        let batches = order.chunks(cfg.batch_size).take(cfg.max_batches_per_epoch.unwrap_or(usize::MAX));
        for (b, chunk) in batches.enumerate() {
            let clips = train_set.batch::<S>(chunk, pre, Some((cfg.seed, epoch)))?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let mode = Mode::Train {
                dropout_seed: Some(step_seed(cfg.seed, epoch, state.step)),
            };
            let out = model.forward(clips.view(), mode)?;
            let loss = weighted_cross_entropy(out.logits.view(), &labels, weights.view())?;
            if !loss.loss.as_f64().is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    samples: chunk.iter().map(|&i| train_set.ids[i].clone()).collect(),
                });
            }
            let cache = out.cache.as_ref().expect("training pass keeps its cache");
            let grads = model.backward(cache, &loss.dlogits)?;
            opt.step(&mut model.params, &grads, &names, lr)?;
            model.update_running_stats(&out.stats)?;
            let w: f64 = labels.iter().map(|&l| weights[l]).sum();
            loss_sum += loss.loss.as_f64() * w;
            weight_sum += w;
            state.step += 1;
        }
        let eval = evaluate(model, val_set, pre, &weights, cfg.batch_size)?;
        state.history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / weight_sum,
            val_loss: eval.loss,
            val_acc: eval.accuracy,
            lr,
        });
        if eval.loss < state.best_val_loss {
            state.best_val_loss = eval.loss;
            state.best_epoch = epoch;
            state.epochs_since_improvement = 0;
            best = model.params.clone();
            if let Some(dir) = out_dir {
                let path = dir.join(BEST_CHECKPOINT);
                SignTransformer::from_params(model.config.clone(), best.clone())?.save(&path)?;
                checkpoint = Some(path);
            }
        } else {
            state.epochs_since_improvement += 1;
        }
        if let Some(dir) = out_dir {
            write_atomic(&dir.join(HISTORY_FILE), history_jsonl(&state.history).as_bytes())?;
        }
        if state.epochs_since_improvement == cfg.patience {
            stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    Ok(TrainOutcome {
        best,
        state,
        stopped_early,
        checkpoint,
    })
}
