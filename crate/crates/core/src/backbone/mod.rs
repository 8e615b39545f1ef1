//! Per-frame spatial feature extraction with a residual network.
//!
//! Activations inside the backbone are channel-major `(C, N, H, W)`, so a
//! whole batch of frames goes through each convolution as one gemm and
//! batch normalization reads contiguous per-channel blocks. The public entry
//! points take and return frame-major data.

pub mod conv;
pub mod norm;
pub mod pool;

use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, Array4, ArrayView3, ArrayView4, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamSet};
use crate::scalar::Scalar;
use conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use norm::{batchnorm_backward, batchnorm_forward, BatchNormCache};
pub use norm::{BatchStats, NormMode};
use pool::{global_avg_pool, global_avg_pool_backward, maxpool_backward, maxpool_forward, MaxPoolCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Resnet18,
    Resnet50,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Resnet18 => "resnet18",
            Variant::Resnet50 => "resnet50",
        }
    }

    fn default_blocks(self) -> Vec<usize> {
        match self {
            Variant::Resnet18 => vec![2, 2, 2, 2],
            Variant::Resnet50 => vec![3, 4, 6, 3],
        }
    }

    fn expansion(self) -> usize {
        match self {
            Variant::Resnet18 => 1,
            Variant::Resnet50 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub variant: Variant,
    pub pretrained: bool,
    /// Archive file, or a directory holding `<variant>.safetensors`.
    pub weights_path: Option<PathBuf>,
    /// Channel count of the stem and first stage; 64 for the standard networks.
    pub base_width: usize,
    /// Residual blocks per stage; `None` uses the variant's standard layout.
    pub stage_blocks: Option<Vec<usize>>,
    /// Keep backbone weights fixed and run it with running statistics.
    pub freeze: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Resnet18,
            pretrained: true,
            weights_path: None,
            base_width: 64,
            stage_blocks: None,
            freeze: false,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl BackboneConfig {
    pub fn blocks(&self) -> Vec<usize> {
        self.stage_blocks
            .clone()
            .unwrap_or_else(|| self.variant.default_blocks())
    }

    /// Width of the per-frame feature vector.
    pub fn out_width(&self) -> usize {
        let stages = self.blocks().len().max(1);
        self.base_width * (1 << (stages - 1)) * self.variant.expansion()
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 {
            return Err(Error::Config("backbone.base_width must be positive".into()));
        }
        let blocks = self.blocks();
        if blocks.is_empty() || blocks.contains(&0) {
            return Err(Error::Config(
                "backbone.stage_blocks needs at least one stage and one block per stage".into(),
            ));
        }
        if self.pretrained && self.weights_path.is_none() {
            return Err(Error::Config(
                "backbone.pretrained requires backbone.weights_path".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::Config("backbone batch-norm momentum/eps out of range".into()));
        }
        Ok(())
    }

    /// Archive path for the configured variant, resolving directories.
    pub fn resolved_weights(&self) -> Option<PathBuf> {
        let path = self.weights_path.as_ref()?;
        if path.is_dir() {
            Some(path.join(format!("{}.safetensors", self.variant.name())))
        } else {
            Some(path.clone())
        }
    }
}

/// One convolution + batch-norm pair inside a residual block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitSpec {
    pub conv: String,
    pub bn: String,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub geometry: ConvGeometry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub prefix: String,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
    pub units: Vec<UnitSpec>,
    /// 1x1 projection shortcut, present when shape changes.
    pub shortcut: Option<UnitSpec>,
}

impl BlockSpec {
    fn new(prefix: String, c_in: usize, width: usize, stride: usize, variant: Variant) -> Self {
        let unit = |name: &str, c_in, c_out, kernel, stride, pad| UnitSpec {
            conv: format!("{prefix}.conv{name}"),
            bn: format!("{prefix}.bn{name}"),
            c_in,
            c_out,
            kernel,
            geometry: ConvGeometry::new(stride, pad),
        };
        let c_out = width * variant.expansion();
        let units = match variant {
            Variant::Resnet18 => vec![unit("1", c_in, width, 3, stride, 1), unit("2", width, width, 3, 1, 1)],
            Variant::Resnet50 => vec![
                unit("1", c_in, width, 1, 1, 0),
                unit("2", width, width, 3, stride, 1),
                unit("3", width, c_out, 1, 1, 0),
            ],
        };
        let shortcut = (stride != 1 || c_in != c_out).then(|| UnitSpec {
            conv: format!("{prefix}.shortcut.conv"),
            bn: format!("{prefix}.shortcut.bn"),
            c_in,
            c_out,
            kernel: 1,
            geometry: ConvGeometry::new(stride, 0),
        });
        Self {
            prefix,
            c_in,
            c_out,
            stride,
            units,
            shortcut,
        }
    }
}

/// Canonical tensor name, shape and kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Full layer table derived from a [`BackboneConfig`].
#[derive(Debug, Clone)]
pub struct Architecture {
    pub stem: UnitSpec,
    pub blocks: Vec<BlockSpec>,
    pub out_width: usize,
}

impl Architecture {
    pub fn new(cfg: &BackboneConfig) -> Self {
        let stem = UnitSpec {
            conv: "stem.conv".into(),
            bn: "stem.bn".into(),
            c_in: 3,
            c_out: cfg.base_width,
            kernel: 7,
            geometry: ConvGeometry::new(2, 3),
        };
        let mut blocks = Vec::new();
        let mut c_in = cfg.base_width;
        for (si, &count) in cfg.blocks().iter().enumerate() {
            let width = cfg.base_width << si;
            for bi in 0..count {
                let stride = if si > 0 && bi == 0 { 2 } else { 1 };
                let prefix = format!("stage{}.block{}", si + 1, bi + 1);
                let block = BlockSpec::new(prefix, c_in, width, stride, cfg.variant);
                c_in = block.c_out;
                blocks.push(block);
            }
        }
        Self {
            stem,
            blocks,
            out_width: c_in,
        }
    }

    fn units(&self) -> impl Iterator<Item = &UnitSpec> {
        std::iter::once(&self.stem).chain(
            self.blocks
                .iter()
                .flat_map(|b| b.units.iter().chain(b.shortcut.iter())),
        )
    }

    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        for u in self.units() {
            out.push(TensorSpec {
                name: u.conv.clone(),
                shape: vec![u.c_out, u.c_in, u.kernel, u.kernel],
                kind: ParamKind::Trainable,
            });
            for (suffix, kind) in [
                ("scale", ParamKind::Trainable),
                ("shift", ParamKind::Trainable),
                ("mean", ParamKind::Buffer),
                ("var", ParamKind::Buffer),
            ] {
                out.push(TensorSpec {
                    name: format!("{}.{suffix}", u.bn),
                    shape: vec![u.c_out],
                    kind,
                });
            }
        }
        out
    }

    /// Trainable element count, excluding running statistics.
    pub fn num_trainable(&self) -> usize {
        self.tensor_specs()
            .iter()
            .filter(|t| t.kind == ParamKind::Trainable)
            .map(|t| t.shape.iter().product::<usize>())
            .sum()
    }
}

/// Fan-out scaled normal for convolutions; unit scale, zero shift, identity running stats.
pub fn init_params<S: Scalar, R: Rng>(cfg: &BackboneConfig, rng: &mut R) -> ParamSet<S> {
    let arch = Architecture::new(cfg);
    let mut params = ParamSet::new();
    for u in arch.units() {
        let fan_out = (u.c_out * u.kernel * u.kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_out).sqrt()).expect("finite std");
        let w = Array4::from_shape_simple_fn((u.c_out, u.c_in, u.kernel, u.kernel), || {
            S::lit(normal.sample(rng))
        });
        params.insert_trainable(u.conv.clone(), w);
        params.insert_trainable(format!("{}.scale", u.bn), ndarray::Array1::<S>::ones(u.c_out));
        params.insert_trainable(format!("{}.shift", u.bn), ndarray::Array1::<S>::zeros(u.c_out));
        params.insert_buffer(format!("{}.mean", u.bn), ndarray::Array1::<S>::zeros(u.c_out));
        params.insert_buffer(format!("{}.var", u.bn), ndarray::Array1::<S>::ones(u.c_out));
    }
    params
}

/// Reads every backbone tensor from an archive; unrelated tensors (such as a
/// classifier head) are ignored.
pub fn load_pretrained<S: Scalar>(path: &Path, cfg: &BackboneConfig) -> Result<ParamSet<S>> {
    let archive = checkpoint::read_archive::<S>(path)?;
    select_backbone(&archive, cfg)
}

/// Picks the backbone tensors out of `source`, checking names and shapes.
pub fn select_backbone<S: Scalar>(source: &ParamSet<S>, cfg: &BackboneConfig) -> Result<ParamSet<S>> {
    let arch = Architecture::new(cfg);
    let mut out = ParamSet::new();
    for spec in arch.tensor_specs() {
        let value = source.get(&spec.name)?;
        if value.shape() != spec.shape.as_slice() {
            return Err(Error::TensorShape {
                name: spec.name,
                expected: spec.shape,
                found: value.shape().to_vec(),
            });
        }
        out.insert(spec.name, value.clone(), spec.kind);
    }
    Ok(out)
}

/// Checks a parameter set against the architecture, naming the first problem.
pub fn check_params<S: Scalar>(params: &ParamSet<S>, cfg: &BackboneConfig) -> Result<()> {
    for spec in Architecture::new(cfg).tensor_specs() {
        params.expect_shape(&spec.name, spec.shape.as_slice())?;
    }
    Ok(())
}

/// Folds batch statistics into the running averages.
pub fn apply_batch_stats<S: Scalar>(
    params: &mut ParamSet<S>,
    stats: &[(String, BatchStats<S>)],
    momentum: f64,
) -> Result<()> {
    let m = S::lit(momentum);
    let keep = S::one() - m;
    for (bn, st) in stats {
        let mut mean = params.vec_mut(&format!("{bn}.mean"))?;
        Zip::from(&mut mean).and(&st.mean).for_each(|r, &b| *r = keep * *r + m * b);
        let mut var = params.vec_mut(&format!("{bn}.var"))?;
        Zip::from(&mut var).and(&st.var).for_each(|r, &b| *r = keep * *r + m * b);
    }
    Ok(())
}

struct UnitCache<S> {
    bn: BatchNormCache<S>,
}

struct BlockCache<S> {
    /// Input of each unit; `unit_inputs[0]` is the block input.
    unit_inputs: Vec<Array4<S>>,
    units: Vec<UnitCache<S>>,
    shortcut: Option<UnitCache<S>>,
    out: Array4<S>,
}

/// Saved activations for the backward pass.
pub struct BackboneCache<S> {
    input: Array4<S>,
    stem: UnitCache<S>,
    stem_act: Array4<S>,
    pool: MaxPoolCache,
    blocks: Vec<BlockCache<S>>,
    final_hw: (usize, usize),
}

pub struct BackboneForward<S> {
    /// `(N, out_width)`, one row per frame.
    pub features: Array2<S>,
    /// Spatial side after the stem, the max-pool, every stage, and global pooling.
    pub spatial_trace: Vec<usize>,
    pub stats: Vec<(String, BatchStats<S>)>,
    pub cache: Option<BackboneCache<S>>,
}

struct Ctx<'a, S> {
    params: &'a ParamSet<S>,
    mode: NormMode,
    eps: f64,
    stats: Vec<(String, BatchStats<S>)>,
}

impl<S: Scalar> Ctx<'_, S> {
    fn unit(&mut self, u: &UnitSpec, x: &Array4<S>) -> Result<(Array4<S>, UnitCache<S>)> {
        let c_in = x.len_of(Axis(0));
        if c_in != u.c_in {
            return Err(Error::shape(format!("{} input channels", u.conv), &[u.c_in], &[c_in]));
        }
        let w = self.params.kernel(&u.conv)?;
        let z = conv2d_forward(x.view(), w, u.geometry);
        let (y, bn, stats) = batchnorm_forward(
            &z,
            self.params.vec(&format!("{}.scale", u.bn))?,
            self.params.vec(&format!("{}.shift", u.bn))?,
            self.params.vec(&format!("{}.mean", u.bn))?,
            self.params.vec(&format!("{}.var", u.bn))?,
            self.mode,
            self.eps,
        );
        if let Some(st) = stats {
            self.stats.push((u.bn.clone(), st));
        }
        Ok((y, UnitCache { bn }))
    }

    fn block(&mut self, b: &BlockSpec, x: Array4<S>, keep: bool) -> Result<(Array4<S>, Option<BlockCache<S>>)> {
        let (sc, sc_cache) = match &b.shortcut {
            Some(u) => {
                let (y, c) = self.unit(u, &x)?;
                (y, Some(c))
            }
            None => (x.clone(), None),
        };
        let mut inputs = Vec::with_capacity(b.units.len());
        let mut caches = Vec::with_capacity(b.units.len());
        let mut h = x;
        let last = b.units.len() - 1;
        for (i, u) in b.units.iter().enumerate() {
            let (mut y, c) = self.unit(u, &h)?;
            if i < last {
                relu_inplace(&mut y);
            }
            if keep {
                inputs.push(h);
                caches.push(c);
            }
            h = y;
        }
        if h.dim() != sc.dim() {
            return Err(Error::shape(
                format!("{} residual sum", b.prefix),
                sc.shape(),
                h.shape(),
            ));
        }
        h += &sc;
        relu_inplace(&mut h);
        let cache = keep.then(|| BlockCache {
            unit_inputs: inputs,
            units: caches,
            shortcut: sc_cache,
            out: h.clone(),
        });
        Ok((h, cache))
    }
}

fn relu_inplace<S: Scalar>(x: &mut Array4<S>) {
    x.mapv_inplace(|v| v.max(S::zero()));
}

fn relu_mask<S: Scalar>(grad: &mut Array4<S>, activation: &Array4<S>) {
    Zip::from(grad).and(activation).for_each(|g, &a| {
        if a <= S::zero() {
            *g = S::zero();
        }
    });
}

/// Frame-major `(N, C, H, W)` to channel-major `(C, N, H, W)`.
pub fn to_channel_major<S: Scalar>(frames: ArrayView4<S>) -> Array4<S> {
    frames.permuted_axes([1, 0, 2, 3]).as_standard_layout().into_owned()
}

/// Runs the backbone on `frames` `(N, 3, H, W)`.
///
/// `NormMode::Batch` normalizes with batch statistics and reports them in
/// `stats`; `NormMode::Running` uses the stored averages. Activations are
/// kept for [`backbone_backward`] only when `keep_cache` is set.
pub fn backbone_forward<S: Scalar>(
    frames: ArrayView4<S>,
    params: &ParamSet<S>,
    cfg: &BackboneConfig,
    mode: NormMode,
    keep_cache: bool,
) -> Result<BackboneForward<S>> {
    if frames.len_of(Axis(1)) != 3 {
        return Err(Error::shape("backbone input", &[3], &[frames.len_of(Axis(1))]));
    }
    let arch = Architecture::new(cfg);
    let mut ctx = Ctx {
        params,
        mode,
        eps: cfg.bn_eps,
        stats: Vec::new(),
    };
    let input = to_channel_major(frames);
    let (mut stem_out, stem_cache) = ctx.unit(&arch.stem, &input)?;
    relu_inplace(&mut stem_out);
    let mut trace = vec![stem_out.len_of(Axis(2))];
    let (mut h, pool_cache) = maxpool_forward(stem_out.view(), 3, 2, 1);
    trace.push(h.len_of(Axis(2)));

    let mut block_caches = Vec::new();
    for (i, b) in arch.blocks.iter().enumerate() {
        let (y, c) = ctx.block(b, h, keep_cache)?;
        h = y;
        block_caches.extend(c);
        let stage_end = arch
            .blocks
            .get(i + 1)
            .is_none_or(|next| next.prefix.split('.').next() != b.prefix.split('.').next());
        if stage_end {
            trace.push(h.len_of(Axis(2)));
        }
    }
    let final_hw = (h.len_of(Axis(2)), h.len_of(Axis(3)));
    let features = global_avg_pool(h.view());
    trace.push(1);

    let cache = keep_cache.then(|| BackboneCache {
        input,
        stem: stem_cache,
        stem_act: stem_out,
        pool: pool_cache,
        blocks: block_caches,
        final_hw,
    });
    Ok(BackboneForward {
        features,
        spatial_trace: trace,
        stats: ctx.stats,
        cache,
    })
}

/// Running-statistics forward in fixed-size frame chunks, bounding memory on large inputs.
pub fn backbone_features_eval<S: Scalar>(
    frames: ArrayView4<S>,
    params: &ParamSet<S>,
    cfg: &BackboneConfig,
    chunk: usize,
) -> Result<Array2<S>> {
    let n = frames.len_of(Axis(0));
    let mut out = Array2::<S>::zeros((n, cfg.out_width()));
    let mut start = 0;
    while start < n {
        let end = (start + chunk.max(1)).min(n);
        let fwd = backbone_forward(frames.slice(s![start..end, .., .., ..]), params, cfg, NormMode::Running, false)?;
        out.slice_mut(s![start..end, ..]).assign(&fwd.features);
        start = end;
    }
    Ok(out)
}

fn unit_backward<S: Scalar>(
    params: &ParamSet<S>,
    grads: &mut ParamSet<S>,
    u: &UnitSpec,
    input: &Array4<S>,
    cache: &UnitCache<S>,
    dy: &Array4<S>,
    need_dx: bool,
) -> Result<Option<Array4<S>>> {
    let scale = params.vec(&format!("{}.scale", u.bn))?;
    let (dz, dscale, dshift) = batchnorm_backward(&cache.bn, scale, dy);
    grads.accumulate(&format!("{}.scale", u.bn), dscale);
    grads.accumulate(&format!("{}.shift", u.bn), dshift);
    let (dx, dw) = conv2d_backward(input.view(), params.kernel(&u.conv)?, u.geometry, &dz, need_dx);
    grads.accumulate(&u.conv, dw);
    Ok(dx)
}

/// Parameter gradients given the loss gradient on the `(N, out_width)` features.
pub fn backbone_backward<S: Scalar>(
    params: &ParamSet<S>,
    cfg: &BackboneConfig,
    cache: &BackboneCache<S>,
    dfeatures: &Array2<S>,
) -> Result<ParamSet<S>> {
    let arch = Architecture::new(cfg);
    let mut grads = ParamSet::new();
    let (fh, fw) = cache.final_hw;
    let mut d = global_avg_pool_backward(dfeatures, fh, fw);

    for (b, bc) in arch.blocks.iter().zip(&cache.blocks).rev() {
        relu_mask(&mut d, &bc.out);
        let dsum = d;
        let mut dh = dsum.clone();
        for i in (0..b.units.len()).rev() {
            if i + 1 < b.units.len() {
                relu_mask(&mut dh, &bc.unit_inputs[i + 1]);
            }
            dh = unit_backward(params, &mut grads, &b.units[i], &bc.unit_inputs[i], &bc.units[i], &dh, true)?
                .expect("input gradient requested");
        }
        match (&b.shortcut, &bc.shortcut) {
            (Some(u), Some(c)) => {
                let dx = unit_backward(params, &mut grads, u, &bc.unit_inputs[0], c, &dsum, true)?
                    .expect("input gradient requested");
                dh += &dx;
            }
            _ => dh += &dsum,
        }
        d = dh;
    }
    let mut d = maxpool_backward(&cache.pool, &d);
    relu_mask(&mut d, &cache.stem_act);
    unit_backward(params, &mut grads, &arch.stem, &cache.input, &cache.stem, &d, false)?;
    Ok(grads)
}

/// Applies one residual block to a single `(C, H, W)` frame using running statistics.
pub fn residual_block_forward<S: Scalar>(
    x: ArrayView3<S>,
    params: &ParamSet<S>,
    block: &BlockSpec,
    bn_eps: f64,
) -> Result<Array3<S>> {
    let (c, h, w) = x.dim();
    let input = x
        .to_owned()
        .into_shape_with_order((c, 1, h, w))
        .expect("single-frame reshape");
    let mut ctx = Ctx {
        params,
        mode: NormMode::Running,
        eps: bn_eps,
        stats: Vec::new(),
    };
    let (y, _) = ctx.block(block, input, false)?;
    let (co, _, oh, ow) = y.dim();
    Ok(y.into_shape_with_order((co, oh, ow)).expect("single-frame reshape"))
}
