//! Train-and-evaluate runs driven by a [`RunConfig`], shared by the CLI,
//! the ablation runner and the acceptance checks.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{BackboneConfig, Variant};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::ingest::{load_manifest, split_dataset, write_splits, DatasetManifest, Split, SplitMode};
use crate::metrics::{classification_report, confusion, EvalReport};
use crate::model::SignTransformer;
use crate::training::trainer::{evaluate, train};
use crate::synthgen::generate_dataset;
use crate::training::{class_weights, pretrain_to_dir, ClipSet, EpochRecord};

/// Loads the manifest named by the config and attaches its split file.
pub fn load_split_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    let mut manifest = load_manifest(&cfg.manifest_path())?;
    let splits = cfg.splits_path();
    if !splits.is_file() {
        return Err(Error::MissingFile(splits));
    }
    manifest.attach_splits(&splits)?;
    Ok(manifest)
}

/// Sampled clips per split, cached by frame count so runs that share `T`
/// decode the frames once.
#[derive(Default)]
pub struct DataCache {
    sets: HashMap<(usize, Split), ClipSet>,
}

impl DataCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, manifest: &DatasetManifest, split: Split, frames: usize) -> Result<&ClipSet> {
        if let std::collections::hash_map::Entry::Vacant(e) = self.sets.entry((frames, split)) {
            let set = ClipSet::load(manifest, split, frames)?;
            e.insert(set);
        }
        Ok(&self.sets[&(frames, split)])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Validation accuracy of the best checkpoint.
    pub val_accuracy: f64,
    /// Report of the best checkpoint on the test split.
    pub test: EvalReport,
    pub runtime_seconds: f64,
    pub stopped_early: bool,
}

/// Metrics of `model` on one split.
pub fn evaluate_split(
    model: &SignTransformer<f32>,
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    set: &ClipSet,
    train_counts: &[usize],
) -> Result<(f64, EvalReport)> {
    let weights = class_weights(train_counts, cfg.train.class_weighting)?;
    let eval = evaluate(model, set, &cfg.preprocess, &weights, cfg.train.batch_size)?;
    let matrix = confusion(&eval.predictions, &set.labels, &manifest.classes)?;
    Ok((eval.loss, classification_report(&matrix)?))
}

/// Builds the model, trains it, restores the best weights and evaluates
/// them on the test split. Returns the trained model with the result.
pub fn train_and_evaluate(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    cache: &mut DataCache,
    out_dir: Option<&Path>,
) -> Result<(SignTransformer<f32>, RunResult)> {
    let start = Instant::now();
    let cfg = cfg.clone().resolve()?;
    let frames = cfg.preprocess.frames;
    let train_set = cache.get(manifest, Split::Train, frames)?.clone();
    let val_set = cache.get(manifest, Split::Val, frames)?.clone();
    let test_set = cache.get(manifest, Split::Test, frames)?.clone();
    let mut seq = cfg.seq.clone();
    seq.num_classes = manifest.num_classes();
    let mut model_cfg = cfg.model();
    model_cfg.seq = seq;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SignTransformer::<f32>::new(model_cfg, &mut rng)?;
    let outcome = train(&mut model, &train_set, &val_set, &cfg.preprocess, &cfg.train, out_dir)?;
    model.params = outcome.best;
    let counts = train_set.class_counts(manifest.num_classes());
    let weights = class_weights(&counts, cfg.train.class_weighting)?;
    let val = evaluate(&model, &val_set, &cfg.preprocess, &weights, cfg.train.batch_size)?;
    let (_, test) = evaluate_split(&model, &cfg, manifest, &test_set, &counts)?;
    let result = RunResult {
        best_epoch: outcome.state.best_epoch,
        best_val_loss: outcome.state.best_val_loss,
        history: outcome.state.history,
        val_accuracy: val.accuracy,
        test,
        runtime_seconds: start.elapsed().as_secs_f64(),
        stopped_early: outcome.stopped_early,
    };
    Ok((model, result))
}

/// Where [`prepare_synthetic`] put things.
#[derive(Debug, Clone, Serialize)]
pub struct SyntheticSetup {
    pub manifest: PathBuf,
    pub splits: PathBuf,
    pub weights_dir: PathBuf,
    pub generated: bool,
}

/// Generates the configured synthetic dataset under `dir/data` (unless it
/// is already there), splits it with the config's split settings, and
/// pretrains backbone weights for every listed variant that lacks them.
/// `cfg` is pointed at the results.
pub fn prepare_synthetic(cfg: &mut RunConfig, dir: &Path, variants: &[Variant]) -> Result<SyntheticSetup> {
    let data = dir.join("data");
    let manifest_path = data.join("manifest.csv");
    let generated = !manifest_path.is_file();
    if generated {
        generate_dataset(&cfg.synth, &data, false)?;
    }
    let manifest = load_manifest(&manifest_path)?;
    let split = split_dataset(&manifest, cfg.split.mode, cfg.split.fractions, cfg.seed)?;
    let splits = data.join(format!("splits_{}_{}.csv", split_mode_name(cfg.split.mode), cfg.seed));
    write_splits(&splits, &split)?;
    let weights_dir = dir.join("weights");
    for &variant in variants {
        let bcfg = BackboneConfig {
            variant,
            ..cfg.backbone.clone()
        };
        if !weights_dir.join(format!("{}.safetensors", variant.name())).is_file() {
            pretrain_to_dir(&bcfg, &cfg.pretrain, &cfg.preprocess, &weights_dir)?;
        }
    }
    cfg.paths.data_root = data;
    cfg.paths.splits = Some(splits.clone());
    cfg.backbone.weights_path = Some(weights_dir.clone());
    Ok(SyntheticSetup {
        manifest: manifest_path,
        splits,
        weights_dir,
        generated,
    })
}

pub fn split_mode_name(mode: SplitMode) -> &'static str {
    match mode {
        SplitMode::SignerDependent => "signer_dependent",
        SplitMode::SignerIndependent => "signer_independent",
    }
}
