//! The full video classifier: per-frame backbone features feeding the temporal model.

use std::path::Path;

use ndarray::{Array2, ArrayView5};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{self, BackboneCache, BackboneConfig, BatchStats, NormMode};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::seqmodel::{self, SeqCache, SeqModelConfig, SeqTrace};

/// Frames per backbone call in evaluation, bounding im2col memory.
pub const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub seq: SeqModelConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.seq.validate()?;
        let width = self.backbone.out_width();
        if let Some(w) = self.seq.backbone_width {
            if w != width {
                return Err(Error::Config(format!(
                    "seq.backbone_width {w} does not match the {} backbone width {width}",
                    self.backbone.variant.name()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Running batch-norm statistics, no dropout, no caches.
    Eval,
    /// Batch statistics (unless the backbone is frozen), optional dropout
    /// seeded per step, activations kept for [`SignTransformer::backward`].
    Train { dropout_seed: Option<u64> },
}

pub struct ModelCache<S> {
    backbone: Option<BackboneCache<S>>,
    seq: SeqCache<S>,
}

pub struct ModelOutput<S> {
    pub logits: Array2<S>,
    pub probs: Array2<S>,
    /// Per-frame backbone features `(B*T, width)`.
    pub features: Array2<S>,
    pub trace: SeqTrace<S>,
    /// Batch-norm statistics of a training pass, for the running averages.
    pub stats: Vec<(String, BatchStats<S>)>,
    pub cache: Option<ModelCache<S>>,
}

impl<S: Scalar> ModelOutput<S> {
    pub fn predictions(&self) -> Vec<usize> {
        seqmodel::argmax_rows(self.logits.view())
    }
}

#[derive(Clone, Debug)]
pub struct SignTransformer<S> {
    pub config: ModelConfig,
    pub params: ParamSet<S>,
}

impl<S: Scalar> SignTransformer<S> {
    /// Builds the model, loading backbone weights when `pretrained` is set.
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.backbone.validate()?;
        config.validate()?;
        let mut params = if config.backbone.pretrained {
            let path = config
                .backbone
                .resolved_weights()
                .ok_or_else(|| Error::Config("backbone.pretrained requires backbone.weights_path".into()))?;
            backbone::load_pretrained(&path, &config.backbone)?
        } else {
            backbone::init_params(&config.backbone, rng)
        };
        params.merge(seqmodel::init_params(&config.seq, config.backbone.out_width(), rng));
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamSet<S>) -> Result<Self> {
        config.validate()?;
        backbone::check_params(&params, &config.backbone)?;
        for (name, shape) in config.seq.tensor_shapes(config.backbone.out_width()) {
            params.expect_shape(&name, shape.as_slice())?;
        }
        Ok(Self { config, params })
    }

    pub fn num_trainable(&self) -> usize {
        self.params.num_trainable()
    }

    /// Classifies clips `(B, T, 3, H, W)`.
    pub fn forward(&self, clips: ArrayView5<S>, mode: Mode) -> Result<ModelOutput<S>> {
        let (b, t, c, h, w) = clips.dim();
        let frames = clips
            .to_shape((b * t, c, h, w))
            .map_err(|_| Error::shape("clip batch", &[b * t, c, h, w], clips.shape()))?;
        let bcfg = &self.config.backbone;
        let (features, stats, bcache, dropout_seed) = match mode {
            Mode::Eval => (
                backbone::backbone_features_eval(frames.view(), &self.params, bcfg, EVAL_CHUNK)?,
                Vec::new(),
                None,
                None,
            ),
            Mode::Train { dropout_seed } if bcfg.freeze => (
                backbone::backbone_features_eval(frames.view(), &self.params, bcfg, EVAL_CHUNK)?,
                Vec::new(),
                None,
                dropout_seed,
            ),
            Mode::Train { dropout_seed } => {
                let fwd = backbone::backbone_forward(frames.view(), &self.params, bcfg, NormMode::Batch, true)?;
                (fwd.features, fwd.stats, fwd.cache, dropout_seed)
            }
        };
        let keep = matches!(mode, Mode::Train { .. });
        let out = seqmodel::seq_forward(&self.params, &self.config.seq, features.view(), b, t, dropout_seed, keep)?;
        let cache = out.cache.map(|seq| ModelCache { backbone: bcache, seq });
        Ok(ModelOutput {
            logits: out.logits,
            probs: out.probs,
            features,
            trace: out.trace,
            stats,
            cache,
        })
    }

    /// Gradients of every trainable tensor given `dloss/dlogits`. Frozen
    /// backbone tensors receive no gradient entry.
    pub fn backward(&self, cache: &ModelCache<S>, dlogits: &Array2<S>) -> Result<ParamSet<S>> {
        let mut grads = ParamSet::new();
        let dfeatures = seqmodel::seq_backward(&self.params, &self.config.seq, &cache.seq, dlogits.view(), &mut grads)?;
        if let Some(bc) = &cache.backbone {
            grads.merge(backbone::backbone_backward(&self.params, &self.config.backbone, bc, &dfeatures)?);
        }
        Ok(grads)
    }

    /// Folds a training pass's batch statistics into the running averages.
    pub fn update_running_stats(&mut self, stats: &[(String, BatchStats<S>)]) -> Result<()> {
        backbone::apply_batch_stats(&mut self.params, stats, self.config.backbone.bn_momentum)
    }

    /// Names of tensors the optimizer may update.
    pub fn trainable_names(&self) -> Vec<String> {
        self.params
            .iter()
            .filter(|(name, p)| {
                p.kind == crate::params::ParamKind::Trainable && !(self.config.backbone.freeze && !name.starts_with("seq."))
            })
            .map(|(name, _)| name.to_string())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let config = serde_json::to_value(&self.config).expect("config serializes");
        checkpoint::write_archive(path, &self.params, config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let manifest = checkpoint::read_manifest(path)?;
        let config: ModelConfig = serde_json::from_value(manifest.config).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("embedded model config: {e}"),
        })?;
        let params = checkpoint::read_archive::<S>(path)?;
        Self::from_params(config, params)
    }
}
