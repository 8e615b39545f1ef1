//! Multi-head scaled dot-product self-attention without masking.

use ndarray::{s, Array2, Array4, ArrayView2, Axis};

use super::linear;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// Numerically stable softmax of every row, in place.
pub fn softmax_rows<S: Scalar>(m: &mut Array2<S>) {
    for mut row in m.rows_mut() {
        let max = row.fold(S::neg_infinity(), |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

pub struct AttentionCache<S> {
    x: Array2<S>,
    q: Array2<S>,
    k: Array2<S>,
    v: Array2<S>,
    /// `(B, H, T, T)` row-stochastic attention weights.
    pub weights: Array4<S>,
    concat: Array2<S>,
}

/// Self-attention over `x` `(B*T, d)`, rows ordered batch-major.
///
/// Parameters live under `{prefix}.{q,k,v,out}.{weight,bias}`.
pub fn mhsa_forward<S: Scalar>(
    params: &ParamSet<S>,
    prefix: &str,
    x: ArrayView2<S>,
    batch: usize,
    seq_len: usize,
    heads: usize,
) -> Result<(Array2<S>, AttentionCache<S>)> {
    let d = x.ncols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::shape(format!("{prefix} heads"), &[d], &[heads]));
    }
    if x.nrows() != batch * seq_len {
        return Err(Error::shape(format!("{prefix} rows"), &[batch * seq_len], &[x.nrows()]));
    }
    let dk = d / heads;
    let scale = S::lit(1.0 / (dk as f64).sqrt());
    let q = linear::apply(params, &format!("{prefix}.q"), x)?;
    let k = linear::apply(params, &format!("{prefix}.k"), x)?;
    let v = linear::apply(params, &format!("{prefix}.v"), x)?;
    let mut weights = Array4::<S>::zeros((batch, heads, seq_len, seq_len));
    let mut concat = Array2::<S>::zeros((batch * seq_len, d));
    for b in 0..batch {
        let rows = b * seq_len..(b + 1) * seq_len;
        for h in 0..heads {
            let cols = h * dk..(h + 1) * dk;
            let qh = q.slice(s![rows.clone(), cols.clone()]);
            let kh = k.slice(s![rows.clone(), cols.clone()]);
            let vh = v.slice(s![rows.clone(), cols.clone()]);
            let mut a = qh.dot(&kh.t());
            a *= scale;
            softmax_rows(&mut a);
            concat.slice_mut(s![rows.clone(), cols]).assign(&a.dot(&vh));
            weights.slice_mut(s![b, h, .., ..]).assign(&a);
        }
    }
    let out = linear::apply(params, &format!("{prefix}.out"), concat.view())?;
    Ok((
        out,
        AttentionCache {
            x: x.to_owned(),
            q,
            k,
            v,
            weights,
            concat,
        },
    ))
}

pub fn mhsa_backward<S: Scalar>(
    params: &ParamSet<S>,
    grads: &mut ParamSet<S>,
    prefix: &str,
    cache: &AttentionCache<S>,
    dy: ArrayView2<S>,
) -> Result<Array2<S>> {
    let (batch, heads, seq_len, _) = cache.weights.dim();
    let d = cache.x.ncols();
    let dk = d / heads;
    let scale = S::lit(1.0 / (dk as f64).sqrt());
    let dconcat = linear::apply_backward(params, grads, &format!("{prefix}.out"), cache.concat.view(), dy)?;
    let mut dq = Array2::<S>::zeros(cache.q.raw_dim());
    let mut dk_ = Array2::<S>::zeros(cache.k.raw_dim());
    let mut dv = Array2::<S>::zeros(cache.v.raw_dim());
    for b in 0..batch {
        let rows = b * seq_len..(b + 1) * seq_len;
        for h in 0..heads {
            let cols = h * dk..(h + 1) * dk;
            let a = cache.weights.slice(s![b, h, .., ..]);
            let d_o = dconcat.slice(s![rows.clone(), cols.clone()]);
            let qh = cache.q.slice(s![rows.clone(), cols.clone()]);
            let kh = cache.k.slice(s![rows.clone(), cols.clone()]);
            let vh = cache.v.slice(s![rows.clone(), cols.clone()]);
            let da = d_o.dot(&vh.t());
            dv.slice_mut(s![rows.clone(), cols.clone()]).assign(&a.t().dot(&d_o));
            let inner = (&da * &a).sum_axis(Axis(1)).insert_axis(Axis(1));
            let mut ds = &a * &(&da - &inner);
            ds *= scale;
            dq.slice_mut(s![rows.clone(), cols.clone()]).assign(&ds.dot(&kh));
            dk_.slice_mut(s![rows.clone(), cols]).assign(&ds.t().dot(&qh));
        }
    }
    let x = cache.x.view();
    let mut dx = linear::apply_backward(params, grads, &format!("{prefix}.q"), x, dq.view())?;
    dx += &linear::apply_backward(params, grads, &format!("{prefix}.k"), x, dk_.view())?;
    dx += &linear::apply_backward(params, grads, &format!("{prefix}.v"), x, dv.view())?;
    Ok(dx)
}
