//! Post-norm transformer encoder layers: `LN(x + MHSA(x))` then `LN(a + FFN(a))`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::{mhsa_backward, mhsa_forward, AttentionCache};
use super::linear;
use crate::error::Result;
use crate::params::ParamSet;
use crate::scalar::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct LayerNormCache<S> {
    xhat: Array2<S>,
    inv_std: Array1<S>,
}

/// Normalizes each row to zero mean and unit variance, then applies scale and shift.
pub fn layer_norm_forward<S: Scalar>(
    x: ArrayView2<S>,
    scale: ArrayView1<S>,
    shift: ArrayView1<S>,
) -> (Array2<S>, LayerNormCache<S>) {
    let d = S::lit(x.ncols() as f64);
    let eps = S::lit(LAYER_NORM_EPS);
    let mut xhat = Array2::<S>::zeros(x.raw_dim());
    let mut inv_std = Array1::<S>::zeros(x.nrows());
    for (r, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / d;
        let var = row.fold(S::zero(), |a, &v| a + (v - mean) * (v - mean)) / d;
        let istd = S::one() / (var + eps).sqrt();
        inv_std[r] = istd;
        Zip::from(xhat.row_mut(r)).and(&row).for_each(|h, &v| *h = (v - mean) * istd);
    }
    let mut y = &xhat * &scale;
    y += &shift;
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `(dx, dscale, dshift)`.
pub fn layer_norm_backward<S: Scalar>(
    cache: &LayerNormCache<S>,
    scale: ArrayView1<S>,
    dy: ArrayView2<S>,
) -> (Array2<S>, Array1<S>, Array1<S>) {
    let dscale = (&dy * &cache.xhat).sum_axis(Axis(0));
    let dshift = dy.sum_axis(Axis(0));
    let g = &dy * &scale;
    let d = S::lit(g.ncols() as f64);
    let mut dx = Array2::<S>::zeros(dy.raw_dim());
    for r in 0..g.nrows() {
        let gr = g.row(r);
        let xh = cache.xhat.row(r);
        let mean_g = gr.sum() / d;
        let mean_gx = Zip::from(&gr).and(&xh).fold(S::zero(), |a, &u, &v| a + u * v) / d;
        let istd = cache.inv_std[r];
        Zip::from(dx.row_mut(r))
            .and(&gr)
            .and(&xh)
            .for_each(|o, &u, &v| *o = istd * (u - mean_g - v * mean_gx));
    }
    (dx, dscale, dshift)
}

/// Inverted dropout mask, or `None` when disabled.
fn dropout_mask<S: Scalar>(shape: (usize, usize), rate: f64, seed: Option<u64>) -> Option<Array2<S>> {
    let seed = seed?;
    if rate <= 0.0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep = S::lit(1.0 / (1.0 - rate));
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < rate {
            S::zero()
        } else {
            keep
        }
    }))
}

pub struct EncoderLayerCache<S> {
    attn: AttentionCache<S>,
    attn_mask: Option<Array2<S>>,
    ln1: LayerNormCache<S>,
    a: Array2<S>,
    hidden: Array2<S>,
    ffn_mask: Option<Array2<S>>,
    ln2: LayerNormCache<S>,
}

impl<S> EncoderLayerCache<S> {
    pub fn attention_weights(&self) -> &ndarray::Array4<S> {
        &self.attn.weights
    }
}

/// Dropout is active only when `dropout_seed` is set.
pub struct LayerOptions {
    pub heads: usize,
    pub dropout: f64,
    pub dropout_seed: Option<u64>,
}

pub fn encoder_layer_forward<S: Scalar>(
    params: &ParamSet<S>,
    prefix: &str,
    z: ArrayView2<S>,
    batch: usize,
    seq_len: usize,
    opts: &LayerOptions,
) -> Result<(Array2<S>, EncoderLayerCache<S>)> {
    let (mut attn_out, attn) = mhsa_forward(params, &format!("{prefix}.attn"), z, batch, seq_len, opts.heads)?;
    let attn_mask = dropout_mask::<S>(attn_out.dim(), opts.dropout, opts.dropout_seed);
    if let Some(m) = &attn_mask {
        attn_out *= m;
    }
    attn_out += &z;
    let (a, ln1) = layer_norm_forward(
        attn_out.view(),
        params.vec(&format!("{prefix}.ln1.scale"))?,
        params.vec(&format!("{prefix}.ln1.shift"))?,
    );
    let mut hidden = linear::apply(params, &format!("{prefix}.ffn.fc1"), a.view())?;
    hidden.mapv_inplace(|v| v.max(S::zero()));
    let mut f = linear::apply(params, &format!("{prefix}.ffn.fc2"), hidden.view())?;
    let ffn_mask = dropout_mask::<S>(f.dim(), opts.dropout, opts.dropout_seed.map(|s| s ^ 0x9e37_79b9));
    if let Some(m) = &ffn_mask {
        f *= m;
    }
    f += &a;
    let (out, ln2) = layer_norm_forward(
        f.view(),
        params.vec(&format!("{prefix}.ln2.scale"))?,
        params.vec(&format!("{prefix}.ln2.shift"))?,
    );
    Ok((
        out,
        EncoderLayerCache {
            attn,
            attn_mask,
            ln1,
            a,
            hidden,
            ffn_mask,
            ln2,
        },
    ))
}

pub fn encoder_layer_backward<S: Scalar>(
    params: &ParamSet<S>,
    grads: &mut ParamSet<S>,
    prefix: &str,
    cache: &EncoderLayerCache<S>,
    dout: ArrayView2<S>,
) -> Result<Array2<S>> {
    let (dr2, dg, db) = layer_norm_backward(&cache.ln2, params.vec(&format!("{prefix}.ln2.scale"))?, dout);
    grads.accumulate(&format!("{prefix}.ln2.scale"), dg);
    grads.accumulate(&format!("{prefix}.ln2.shift"), db);

    let mut df = dr2.clone();
    if let Some(m) = &cache.ffn_mask {
        df *= m;
    }
    let mut dhidden = linear::apply_backward(params, grads, &format!("{prefix}.ffn.fc2"), cache.hidden.view(), df.view())?;
    Zip::from(&mut dhidden).and(&cache.hidden).for_each(|g, &h| {
        if h <= S::zero() {
            *g = S::zero();
        }
    });
    let mut da = linear::apply_backward(params, grads, &format!("{prefix}.ffn.fc1"), cache.a.view(), dhidden.view())?;
    da += &dr2;

    let (dr1, dg, db) = layer_norm_backward(&cache.ln1, params.vec(&format!("{prefix}.ln1.scale"))?, da.view());
    grads.accumulate(&format!("{prefix}.ln1.scale"), dg);
    grads.accumulate(&format!("{prefix}.ln1.shift"), db);

    let mut dattn = dr1.clone();
    if let Some(m) = &cache.attn_mask {
        dattn *= m;
    }
    let mut dz = mhsa_backward(params, grads, &format!("{prefix}.attn"), &cache.attn, dattn.view())?;
    dz += &dr1;
    Ok(dz)
}
