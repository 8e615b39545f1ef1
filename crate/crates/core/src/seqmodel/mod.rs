//! Temporal model over per-frame features: projection, positional encoding,
//! post-norm transformer encoder stack, (bi)LSTM and a mean-pool classifier.
//!
//! Sequences travel as `(B*T, width)` matrices with batch-major rows, so row
//! `b * T + t` is frame `t` of clip `b`.

pub mod attention;
pub mod encoder;
pub mod head;
pub mod linear;
pub mod lstm;
pub mod posenc;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

pub use attention::{mhsa_forward, softmax_rows};
pub use encoder::{encoder_layer_forward, layer_norm_forward, LayerOptions};
pub use head::{argmax_rows, classify, classify_backward, Classified};
pub use lstm::lstm_forward;
pub use posenc::positional_encoding;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqModelConfig {
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub lstm_hidden: usize,
    pub bidirectional: bool,
    pub positional_encoding: bool,
    pub num_classes: usize,
    /// Per-frame feature width; `None` takes it from the backbone.
    pub backbone_width: Option<usize>,
    pub dropout: f64,
}

impl Default for SeqModelConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            num_layers: 3,
            num_heads: 8,
            ffn_dim: 1024,
            lstm_hidden: 128,
            bidirectional: true,
            positional_encoding: true,
            num_classes: 85,
            backbone_width: None,
            dropout: 0.0,
        }
    }
}

impl SeqModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return fail(format!(
                "d_model {} must be a positive multiple of num_heads {}",
                self.d_model, self.num_heads
            ));
        }
        if self.positional_encoding && !self.d_model.is_multiple_of(2) {
            return fail(format!("positional encoding needs an even d_model, got {}", self.d_model));
        }
        if self.ffn_dim == 0 || self.lstm_hidden == 0 || self.num_classes == 0 {
            return fail("ffn_dim, lstm_hidden and num_classes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.num_heads
    }

    /// Hidden size of each LSTM direction. A single direction gets twice the
    /// configured size so the classifier input keeps the same width.
    pub fn direction_hidden(&self) -> usize {
        if self.bidirectional {
            self.lstm_hidden
        } else {
            2 * self.lstm_hidden
        }
    }

    pub fn lstm_out_width(&self) -> usize {
        2 * self.lstm_hidden
    }

    pub fn input_width(&self, backbone_width: usize) -> usize {
        self.backbone_width.unwrap_or(backbone_width)
    }

    /// Every tensor the model owns, as `(name, shape)`.
    pub fn tensor_shapes(&self, backbone_width: usize) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = Vec::new();
        let affine = |out: &mut Vec<(String, Vec<usize>)>, p: &str, i: usize, o: usize| {
            out.push((format!("{p}.weight"), vec![i, o]));
            out.push((format!("{p}.bias"), vec![o]));
        };
        affine(&mut out, "seq.proj", self.input_width(backbone_width), d);
        for l in 0..self.num_layers {
            for m in ["q", "k", "v", "out"] {
                affine(&mut out, &format!("seq.encoder.{l}.attn.{m}"), d, d);
            }
            out.push((format!("seq.encoder.{l}.ln1.scale"), vec![d]));
            out.push((format!("seq.encoder.{l}.ln1.shift"), vec![d]));
            affine(&mut out, &format!("seq.encoder.{l}.ffn.fc1"), d, self.ffn_dim);
            affine(&mut out, &format!("seq.encoder.{l}.ffn.fc2"), self.ffn_dim, d);
            out.push((format!("seq.encoder.{l}.ln2.scale"), vec![d]));
            out.push((format!("seq.encoder.{l}.ln2.shift"), vec![d]));
        }
        let h = self.direction_hidden();
        let dirs: &[&str] = if self.bidirectional { &["fwd", "bwd"] } else { &["fwd"] };
        for dir in dirs {
            out.push((format!("seq.lstm.{dir}.w_ih"), vec![d, 4 * h]));
            out.push((format!("seq.lstm.{dir}.w_hh"), vec![h, 4 * h]));
            out.push((format!("seq.lstm.{dir}.bias"), vec![4 * h]));
        }
        affine(&mut out, "seq.head", self.lstm_out_width(), self.num_classes);
        out
    }
}

/// Uniform `±1/sqrt(fan_in)` for affine and recurrent weights, identity layer norms.
pub fn init_params<S: Scalar, R: Rng>(cfg: &SeqModelConfig, backbone_width: usize, rng: &mut R) -> ParamSet<S> {
    let mut params = ParamSet::new();
    for (name, shape) in cfg.tensor_shapes(backbone_width) {
        let value = if name.ends_with(".scale") {
            ndarray::ArrayD::from_elem(shape, S::one())
        } else if name.ends_with(".shift") {
            ndarray::ArrayD::zeros(shape)
        } else {
            let fan_in = if name.starts_with("seq.lstm") {
                cfg.direction_hidden()
            } else if name.ends_with(".weight") {
                shape[0]
            } else {
                // biases share the fan-in of their weight
                fan_in_of_bias(cfg, backbone_width, &name)
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            ndarray::ArrayD::from_shape_simple_fn(shape, || S::lit(dist.sample(rng)))
        };
        params.insert_trainable(name, value);
    }
    params
}

fn fan_in_of_bias(cfg: &SeqModelConfig, backbone_width: usize, name: &str) -> usize {
    if name == "seq.proj.bias" {
        cfg.input_width(backbone_width)
    } else if name.ends_with("fc2.bias") {
        cfg.ffn_dim
    } else if name == "seq.head.bias" {
        cfg.lstm_out_width()
    } else {
        cfg.d_model
    }
}

/// Applies the input projection to `(B, T, w)` features.
pub fn project<S: Scalar>(features: ArrayView3<S>, params: &ParamSet<S>) -> Result<Array3<S>> {
    let (b, t, w) = features.dim();
    let flat = features.to_shape((b * t, w)).expect("contiguous reshape");
    let z = linear::apply(params, "seq.proj", flat.view())?;
    let d = z.ncols();
    Ok(z.into_shape_with_order((b, t, d)).expect("row-major"))
}

pub struct SeqCache<S> {
    features: Array2<S>,
    layers: Vec<encoder::EncoderLayerCache<S>>,
    lstm: lstm::LstmCache<S>,
    pooled: Array2<S>,
}

impl<S> SeqCache<S> {
    pub fn layer_caches(&self) -> &[encoder::EncoderLayerCache<S>] {
        &self.layers
    }
}

/// Intermediate activations of one pass, each `(B*T, width)`.
pub struct SeqTrace<S> {
    /// Projection output, plus positional encoding when enabled.
    pub projected: Array2<S>,
    pub encoded: Array2<S>,
    pub lstm_out: Array2<S>,
}

pub struct SeqOutput<S> {
    pub logits: Array2<S>,
    pub probs: Array2<S>,
    pub trace: SeqTrace<S>,
    pub cache: Option<SeqCache<S>>,
}

/// Runs the encoder stack alone on `(B*T, d_model)` input.
pub fn encoder_stack_forward<S: Scalar>(
    params: &ParamSet<S>,
    cfg: &SeqModelConfig,
    z: ArrayView2<S>,
    batch: usize,
    seq_len: usize,
    dropout_seed: Option<u64>,
) -> Result<(Array2<S>, Vec<encoder::EncoderLayerCache<S>>)> {
    let mut x = z.to_owned();
    let mut caches = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let opts = LayerOptions {
            heads: cfg.num_heads,
            dropout: cfg.dropout,
            dropout_seed: dropout_seed.map(|s| s.wrapping_add(l as u64 * 0x1000_0001)),
        };
        let (y, cache) = encoder_layer_forward(params, &format!("seq.encoder.{l}"), x.view(), batch, seq_len, &opts)?;
        x = y;
        caches.push(cache);
    }
    Ok((x, caches))
}

/// Full temporal model on `(B*T, w)` per-frame features.
///
/// `dropout_seed` enables dropout (when configured) for a training pass.
pub fn seq_forward<S: Scalar>(
    params: &ParamSet<S>,
    cfg: &SeqModelConfig,
    features: ArrayView2<S>,
    batch: usize,
    seq_len: usize,
    dropout_seed: Option<u64>,
    keep_cache: bool,
) -> Result<SeqOutput<S>> {
    if features.nrows() != batch * seq_len {
        return Err(Error::shape("sequence features", &[batch * seq_len, features.ncols()], features.shape()));
    }
    let mut projected = linear::apply(params, "seq.proj", features)?;
    if cfg.positional_encoding {
        let pe: Array2<S> = positional_encoding(seq_len, cfg.d_model)?;
        for b in 0..batch {
            let mut block = projected.slice_mut(ndarray::s![b * seq_len..(b + 1) * seq_len, ..]);
            block += &pe;
        }
    }
    let (encoded, layers) = encoder_stack_forward(params, cfg, projected.view(), batch, seq_len, dropout_seed)?;
    let (lstm_out, lstm_cache) = lstm_forward(params, "seq.lstm", encoded.view(), batch, seq_len, cfg.bidirectional)?;
    let Classified { logits, probs, pooled } = classify(params, "seq.head", lstm_out.view(), batch, seq_len)?;
    let cache = keep_cache.then(|| SeqCache {
        features: features.to_owned(),
        layers,
        lstm: lstm_cache,
        pooled,
    });
    Ok(SeqOutput {
        logits,
        probs,
        trace: SeqTrace {
            projected,
            encoded,
            lstm_out,
        },
        cache,
    })
}

/// Accumulates gradients for every `seq.*` tensor and returns the gradient
/// with respect to the input features.
pub fn seq_backward<S: Scalar>(
    params: &ParamSet<S>,
    cfg: &SeqModelConfig,
    cache: &SeqCache<S>,
    dlogits: ArrayView2<S>,
    grads: &mut ParamSet<S>,
) -> Result<Array2<S>> {
    let seq_len = cache.features.nrows() / dlogits.nrows().max(1);
    let dl = head::classify_backward(params, grads, "seq.head", cache.pooled.view(), dlogits, seq_len)?;
    let mut dz = lstm::lstm_backward(params, grads, "seq.lstm", &cache.lstm, dl.view())?;
    for l in (0..cfg.num_layers).rev() {
        dz = encoder::encoder_layer_backward(params, grads, &format!("seq.encoder.{l}"), &cache.layers[l], dz.view())?;
    }
    linear::apply_backward(params, grads, "seq.proj", cache.features.view(), dz.view())
}
