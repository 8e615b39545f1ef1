//! Affine maps on row-major `(rows, features)` matrices, `y = x W + b`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

pub fn linear_forward<S: Scalar>(x: ArrayView2<S>, w: ArrayView2<S>, b: ArrayView1<S>) -> Array2<S> {
    let mut y = x.dot(&w);
    y += &b;
    y
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward<S: Scalar>(
    x: ArrayView2<S>,
    w: ArrayView2<S>,
    dy: ArrayView2<S>,
) -> (Array2<S>, Array2<S>, Array1<S>) {
    (dy.dot(&w.t()), x.t().dot(&dy), dy.sum_axis(Axis(0)))
}

/// Named affine layer: `{prefix}.weight` `(in, out)` and `{prefix}.bias` `(out)`.
pub(crate) fn apply<S: Scalar>(params: &ParamSet<S>, prefix: &str, x: ArrayView2<S>) -> Result<Array2<S>> {
    let w = params.mat(&format!("{prefix}.weight"))?;
    let b = params.vec(&format!("{prefix}.bias"))?;
    if x.ncols() != w.nrows() {
        return Err(Error::shape(format!("{prefix} input width"), &[w.nrows()], &[x.ncols()]));
    }
    Ok(linear_forward(x, w, b))
}

/// Accumulates parameter gradients and returns the input gradient.
pub(crate) fn apply_backward<S: Scalar>(
    params: &ParamSet<S>,
    grads: &mut ParamSet<S>,
    prefix: &str,
    x: ArrayView2<S>,
    dy: ArrayView2<S>,
) -> Result<Array2<S>> {
    let w = params.mat(&format!("{prefix}.weight"))?;
    let (dx, dw, db) = linear_backward(x, w, dy);
    grads.accumulate(&format!("{prefix}.weight"), dw);
    grads.accumulate(&format!("{prefix}.bias"), db);
    Ok(dx)
}
