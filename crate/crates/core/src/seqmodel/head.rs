//! Mean-pool over time followed by an affine classifier.

use ndarray::{Array2, ArrayView2, Axis};

use super::attention::softmax_rows;
use super::linear;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// Averages `(B*T, w)` rows over time into `(B, w)`.
pub fn mean_pool<S: Scalar>(l: ArrayView2<S>, batch: usize, seq_len: usize) -> Result<Array2<S>> {
    if l.nrows() != batch * seq_len || seq_len == 0 {
        return Err(Error::shape("mean pool rows", &[batch * seq_len], &[l.nrows()]));
    }
    let w = l.ncols();
    let pooled = l
        .to_shape((batch, seq_len, w))
        .expect("row count checked")
        .mean_axis(Axis(1))
        .expect("non-empty time axis");
    Ok(pooled)
}

pub fn mean_pool_backward<S: Scalar>(dpooled: ArrayView2<S>, seq_len: usize) -> Array2<S> {
    let (batch, w) = dpooled.dim();
    let inv = S::lit(1.0 / seq_len as f64);
    let mut dl = Array2::<S>::zeros((batch * seq_len, w));
    for b in 0..batch {
        let g = dpooled.row(b).mapv(|v| v * inv);
        for t in 0..seq_len {
            dl.row_mut(b * seq_len + t).assign(&g);
        }
    }
    dl
}

pub struct Classified<S> {
    pub logits: Array2<S>,
    pub probs: Array2<S>,
    pub pooled: Array2<S>,
}

impl<S: Scalar> Classified<S> {
    /// Index of the most probable class per row.
    pub fn predictions(&self) -> Vec<usize> {
        argmax_rows(self.logits.view())
    }
}

pub fn argmax_rows<S: Scalar>(m: ArrayView2<S>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Head parameters: `{prefix}.weight` `(w, C)` and `{prefix}.bias` `(C)`.
pub fn classify<S: Scalar>(
    params: &ParamSet<S>,
    prefix: &str,
    l: ArrayView2<S>,
    batch: usize,
    seq_len: usize,
) -> Result<Classified<S>> {
    let pooled = mean_pool(l, batch, seq_len)?;
    let logits = linear::apply(params, prefix, pooled.view())?;
    let mut probs = logits.clone();
    softmax_rows(&mut probs);
    Ok(Classified { logits, probs, pooled })
}

pub fn classify_backward<S: Scalar>(
    params: &ParamSet<S>,
    grads: &mut ParamSet<S>,
    prefix: &str,
    pooled: ArrayView2<S>,
    dlogits: ArrayView2<S>,
    seq_len: usize,
) -> Result<Array2<S>> {
    let dpooled = linear::apply_backward(params, grads, prefix, pooled, dlogits)?;
    Ok(mean_pool_backward(dpooled.view(), seq_len))
}
