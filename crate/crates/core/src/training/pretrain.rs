//! Backbone pretraining on rendered still frames: the network learns to
//! locate the hand proxy on a 3×3 grid across random signers and shapes.
//! This stands in for ImageNet weights when none are available offline.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{self, BackboneConfig, NormMode};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::preprocess::{normalize_clip, resize_frame, PreprocessConfig};
use crate::scalar::Scalar;
use crate::seqmodel::{argmax_rows, classify, classify_backward};
use crate::synthgen::render::{draw_frame, SignerStyle};
use crate::synthgen::Shape;

use super::loss::weighted_cross_entropy;
use super::optim::{AdamW, AdamWConfig};

const HEAD: &str = "pretrain.head";
pub const GRID_CELLS: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub frames: usize,
    pub resolution: u32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub style_jitter: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            frames: 1024,
            resolution: 64,
            epochs: 4,
            batch_size: 32,
            lr: 3e-3,
            weight_decay: 1e-2,
            style_jitter: 0.15,
            seed: 1,
        }
    }
}

/// Normalized frames `(N, 3, S, S)` with their grid-cell labels.
pub fn pretrain_frames(cfg: &PretrainConfig, pre: &PreprocessConfig) -> Result<(Array4<f32>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let size = pre.target_size;
    let mut frames = Array4::<f32>::zeros((cfg.frames, 3, size, size));
    let mut labels = Vec::with_capacity(cfg.frames);
    for i in 0..cfg.frames {
        let style = SignerStyle::draw(&mut rng, cfg.style_jitter);
        let shape = Shape::ALL[rng.random_range(0..Shape::ALL.len())];
        let p = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
        let cell = |v: f64| ((v - 0.1) / 0.8 * 3.0).floor().min(2.0) as usize;
        labels.push(cell(p[1]) * 3 + cell(p[0]));
        let img = draw_frame(cfg.resolution, &style, shape, p);
        let (w, h) = img.dimensions();
        let chw = ndarray::Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
        });
        frames.index_axis_mut(Axis(0), i).assign(&resize_frame(chw.view(), size, size));
    }
    normalize_clip(frames.view_mut(), &pre.mean, &pre.std)?;
    Ok((frames, labels))
}

/// Per-epoch mean loss and final training accuracy of a pretraining run.
#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    pub losses: Vec<f64>,
    pub accuracy: f64,
}

/// Trains a freshly initialized backbone plus a linear grid-cell head and
/// returns the backbone tensors only.
pub fn pretrain_backbone<S: Scalar>(
    bcfg: &BackboneConfig,
    frames: &Array4<f32>,
    labels: &[usize],
    cfg: &PretrainConfig,
) -> Result<(ParamSet<S>, PretrainReport)> {
    if frames.len_of(Axis(0)) != labels.len() || labels.is_empty() {
        return Err(Error::shape("pretrain frames", &[labels.len()], &[frames.len_of(Axis(0))]));
    }
    let bcfg = BackboneConfig {
        pretrained: false,
        freeze: false,
        ..bcfg.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut params: ParamSet<S> = backbone::init_params(&bcfg, &mut rng);
    let width = bcfg.out_width();
    let bound = 1.0 / (width as f64).sqrt();
    params.insert_trainable(
        format!("{HEAD}.weight"),
        ndarray::Array2::from_shape_fn((width, GRID_CELLS), |_| S::lit(rng.random_range(-bound..bound))),
    );
    params.insert_trainable(format!("{HEAD}.bias"), Array1::<S>::zeros(GRID_CELLS));
    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.kind == crate::params::ParamKind::Trainable)
        .map(|(n, _)| n.to_string())
        .collect();
    let uniform = Array1::<f64>::ones(GRID_CELLS);
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut report = PretrainReport {
        losses: Vec::new(),
        accuracy: 0.0,
    };
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = super::schedule::lr_at(epoch, cfg.epochs, cfg.lr, 0.0);
        let (mut sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch = frames.select(Axis(0), chunk).mapv(|v| S::lit(v as f64));
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let fwd = backbone::backbone_forward(batch.view(), &params, &bcfg, NormMode::Batch, true)?;
            let head = classify(&params, HEAD, fwd.features.view(), chunk.len(), 1)?;
            let loss = weighted_cross_entropy(head.logits.view(), &y, uniform.view())?;
            sum += loss.loss.as_f64() * chunk.len() as f64;
            correct += argmax_rows(head.logits.view()).iter().zip(&y).filter(|(p, l)| p == l).count();
            let mut grads = ParamSet::new();
            let dfeat = classify_backward(&params, &mut grads, HEAD, head.pooled.view(), loss.dlogits.view(), 1)?;
            let cache = fwd.cache.as_ref().expect("cache requested");
            grads.merge(backbone::backbone_backward(&params, &bcfg, cache, &dfeat)?);
            opt.step(&mut params, &grads, &names, lr)?;
            backbone::apply_batch_stats(&mut params, &fwd.stats, bcfg.bn_momentum)?;
        }
        report.losses.push(sum / labels.len() as f64);
        report.accuracy = correct as f64 / labels.len() as f64;
    }
    Ok((backbone::select_backbone(&params, &bcfg)?, report))
}

/// Runs [`pretrain_backbone`] and writes `<variant>.safetensors` into `dir`,
/// the layout `backbone.weights_path` accepts.
pub fn pretrain_to_dir(
    bcfg: &BackboneConfig,
    cfg: &PretrainConfig,
    pre: &PreprocessConfig,
    dir: &Path,
) -> Result<(PathBuf, PretrainReport)> {
    let (frames, labels) = pretrain_frames(cfg, pre)?;
    let (params, report) = pretrain_backbone::<f32>(bcfg, &frames, &labels, cfg)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(format!("{}.safetensors", bcfg.variant.name()));
    let meta = serde_json::json!({ "backbone": bcfg, "pretrain": cfg, "report": report });
    checkpoint::write_archive(&path, &params, meta)?;
    Ok((path, report))
}
