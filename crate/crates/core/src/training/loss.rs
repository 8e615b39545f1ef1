//! Class weights and the class-weighted cross-entropy.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    #[default]
    InverseFrequency,
    Uniform,
}

/// `w_j = N / (C n_j)` for inverse frequency, so the weights average to one.
pub fn class_weights(counts: &[usize], mode: ClassWeighting) -> Result<Array1<f64>> {
    if let Some(class) = counts.iter().position(|&n| n == 0) {
        return Err(Error::EmptyClass { class: class.to_string() });
    }
    Ok(match mode {
        ClassWeighting::Uniform => Array1::ones(counts.len()),
        ClassWeighting::InverseFrequency => {
            let total: usize = counts.iter().sum();
            let c = counts.len() as f64;
            counts.iter().map(|&n| total as f64 / (c * n as f64)).collect()
        }
    })
}

pub fn log_softmax_row<S: Scalar>(row: ArrayView1<S>) -> Array1<S> {
    let max = row.fold(S::neg_infinity(), |a, &b| a.max(b));
    let lse = row.fold(S::zero(), |a, &v| a + (v - max).exp()).ln() + max;
    row.mapv(|v| v - lse)
}

pub struct LossOutput<S> {
    /// Weighted mean over the batch.
    pub loss: S,
    /// Unweighted `-log p(label)` per sample.
    pub per_sample: Vec<S>,
    pub dlogits: Array2<S>,
}

/// `sum_b w_{y_b} (-log p_b(y_b)) / sum_b w_{y_b}` and its gradient.
pub fn weighted_cross_entropy<S: Scalar>(
    logits: ArrayView2<S>,
    labels: &[usize],
    weights: ArrayView1<f64>,
) -> Result<LossOutput<S>> {
    if logits.nrows() != labels.len() {
        return Err(Error::shape("loss labels", &[logits.nrows()], &[labels.len()]));
    }
    let classes = logits.ncols();
    if weights.len() != classes {
        return Err(Error::shape("class weights", &[classes], &[weights.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::IndexOutOfRange { index: bad, classes });
    }
    let wsum: f64 = labels.iter().map(|&y| weights[y]).sum();
    let wsum = S::lit(wsum);
    let mut dlogits = Array2::<S>::zeros(logits.raw_dim());
    let mut per_sample = Vec::with_capacity(labels.len());
    let mut total = S::zero();
    for (b, &y) in labels.iter().enumerate() {
        let logp = log_softmax_row(logits.row(b));
        let w = S::lit(weights[y]);
        let nll = -logp[y];
        per_sample.push(nll);
        total += w * nll;
        let scale = w / wsum;
        for (j, (d, &lp)) in dlogits.row_mut(b).iter_mut().zip(logp.iter()).enumerate() {
            let onehot = if j == y { S::one() } else { S::zero() };
            *d = scale * (lp.exp() - onehot);
        }
    }
    Ok(LossOutput {
        loss: total / wsum,
        per_sample,
        dlogits,
    })
}
