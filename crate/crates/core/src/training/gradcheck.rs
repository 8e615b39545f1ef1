//! Central finite differences against the analytic backward pass.
//!
//! Errors are measured per tensor as `|a - n| / max(|a|, |n|, floor)` over the
//! whole gradient (Euclidean norms), which keeps single near-zero entries from
//! dominating the report. The floor covers tensors whose true gradient is
//! identically zero, such as the key bias of softmax attention.

use ndarray::{Array1, Array5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{BackboneConfig, Variant};
use crate::error::Result;
use crate::model::{Mode, ModelConfig, SignTransformer};
use crate::params::ParamSet;
use crate::seqmodel::SeqModelConfig;

use super::loss::weighted_cross_entropy;

pub const DEFAULT_TOLERANCE: f64 = 1e-3;

/// Gradient norm below which errors are taken as absolute.
pub const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GroupError {
    pub name: String,
    pub entries: usize,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

pub struct GradCheckOptions<'a> {
    pub step: f64,
    pub tolerance: f64,
    /// Applied to the analytic gradients before comparison.
    pub corrupt: Option<&'a dyn Fn(&mut ParamSet<f64>)>,
}

impl Default for GradCheckOptions<'_> {
    fn default() -> Self {
        Self {
            step: 1e-6,
            tolerance: DEFAULT_TOLERANCE,
            corrupt: None,
        }
    }
}

pub struct GradCheckCase {
    pub model: SignTransformer<f64>,
    pub clips: Array5<f64>,
    pub labels: Vec<usize>,
    pub weights: Array1<f64>,
}

/// Two clips of four 8x8 frames through a two-block backbone, an 8-wide
/// single-layer encoder with two heads, a 4-unit bidirectional LSTM and three classes.
pub fn tiny_case(seed: u64) -> Result<GradCheckCase> {
    let config = ModelConfig {
        backbone: BackboneConfig {
            variant: Variant::Resnet18,
            pretrained: false,
            base_width: 4,
            stage_blocks: Some(vec![1, 1]),
            ..BackboneConfig::default()
        },
        seq: SeqModelConfig {
            d_model: 8,
            num_layers: 1,
            num_heads: 2,
            ffn_dim: 16,
            lstm_hidden: 4,
            num_classes: 3,
            ..SeqModelConfig::default()
        },
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SignTransformer::new(config, &mut rng)?;
    let clips = Array5::from_shape_simple_fn((2, 4, 3, 8, 8), || rng.random_range(-1.0..1.0));
    Ok(GradCheckCase {
        model,
        clips,
        labels: vec![0, 2],
        weights: Array1::from(vec![0.8, 1.1, 1.3]),
    })
}

fn loss_of(case: &GradCheckCase) -> Result<f64> {
    let out = case.model.forward(case.clips.view(), Mode::Train { dropout_seed: None })?;
    Ok(weighted_cross_entropy(out.logits.view(), &case.labels, case.weights.view())?.loss)
}

/// Checks the gradient of every tensor in `names`; an empty list yields an empty, passing report.
pub fn grad_check(case: &mut GradCheckCase, names: &[String], opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut report = GradCheckReport {
        groups: Vec::new(),
        max_rel_error: 0.0,
        tolerance: opts.tolerance,
    };
    if names.is_empty() {
        return Ok(report);
    }
    let out = case.model.forward(case.clips.view(), Mode::Train { dropout_seed: None })?;
    let loss = weighted_cross_entropy(out.logits.view(), &case.labels, case.weights.view())?;
    let cache = out.cache.expect("training pass keeps caches");
    let mut grads = case.model.backward(&cache, &loss.dlogits)?;
    if let Some(corrupt) = opts.corrupt {
        corrupt(&mut grads);
    }
    for name in names {
        let analytic = match grads.get(name) {
            Ok(g) => g.clone(),
            Err(_) => ndarray::ArrayD::zeros(case.model.params.get(name)?.raw_dim()),
        };
        let n = analytic.len();
        let mut diff_sq = 0.0;
        let mut a_sq = 0.0;
        let mut n_sq = 0.0;
        for i in 0..n {
            let original = case.model.params.get(name)?.as_slice_memory_order().expect("contiguous")[i];
            let set = |v: f64, case: &mut GradCheckCase| -> Result<()> {
                case.model.params.get_mut(name)?.as_slice_memory_order_mut().expect("contiguous")[i] = v;
                Ok(())
            };
            set(original + opts.step, case)?;
            let plus = loss_of(case)?;
            set(original - opts.step, case)?;
            let minus = loss_of(case)?;
            set(original, case)?;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic.as_slice_memory_order().expect("contiguous")[i];
            diff_sq += (a - numeric) * (a - numeric);
            a_sq += a * a;
            n_sq += numeric * numeric;
        }
        let rel = diff_sq.sqrt() / a_sq.sqrt().max(n_sq.sqrt()).max(NORM_FLOOR);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.groups.push(GroupError {
            name: name.clone(),
            entries: n,
            rel_error: rel,
        });
    }
    Ok(report)
}
