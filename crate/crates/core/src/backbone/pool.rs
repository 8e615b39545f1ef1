//! Spatial max pooling and global average pooling on `(C, N, H, W)` tensors.

use ndarray::{Array2, Array4, ArrayView4, Axis};

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct MaxPoolCache {
    /// Flat input offset of the winning element for every output element.
    argmax: Vec<usize>,
    input_dim: (usize, usize, usize, usize),
}

/// Max pooling with `-inf` padding.
pub fn maxpool_forward<S: Scalar>(
    x: ArrayView4<S>,
    kernel: usize,
    stride: usize,
    pad: usize,
) -> (Array4<S>, MaxPoolCache) {
    let (c, n, h, w) = x.dim();
    let oh = (h + 2 * pad - kernel) / stride + 1;
    let ow = (w + 2 * pad - kernel) / stride + 1;
    let x = x.as_standard_layout();
    let data = x.as_slice().expect("standard layout");
    let mut y = Array4::<S>::zeros((c, n, oh, ow));
    let mut argmax = Vec::with_capacity(y.len());
    let out = y.as_slice_mut().expect("fresh array");
    let mut k = 0;
    for plane in 0..c * n {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = S::neg_infinity();
                let mut best_at = base;
                for a in 0..kernel {
                    let iy = (oy * stride + a) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for b in 0..kernel {
                        let ix = (ox * stride + b) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let at = base + iy as usize * w + ix as usize;
                        if data[at] > best {
                            best = data[at];
                            best_at = at;
                        }
                    }
                }
                out[k] = best;
                argmax.push(best_at);
                k += 1;
            }
        }
    }
    (
        y,
        MaxPoolCache {
            argmax,
            input_dim: (c, n, h, w),
        },
    )
}

pub fn maxpool_backward<S: Scalar>(cache: &MaxPoolCache, dy: &Array4<S>) -> Array4<S> {
    let mut dx = Array4::<S>::zeros(cache.input_dim);
    let dst = dx.as_slice_mut().expect("fresh array");
    for (&at, &g) in cache.argmax.iter().zip(dy.iter()) {
        dst[at] += g;
    }
    dx
}

/// Averages every `(c, n)` plane, returning `(N, C)`.
pub fn global_avg_pool<S: Scalar>(x: ArrayView4<S>) -> Array2<S> {
    let (c, n, h, w) = x.dim();
    let inv = S::lit(1.0 / (h * w) as f64);
    let mut out = Array2::<S>::zeros((n, c));
    for ci in 0..c {
        let xc = x.index_axis(Axis(0), ci);
        for f in 0..n {
            out[[f, ci]] = xc.index_axis(Axis(0), f).sum() * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<S: Scalar>(dy: &Array2<S>, h: usize, w: usize) -> Array4<S> {
    let (n, c) = dy.dim();
    let inv = S::lit(1.0 / (h * w) as f64);
    Array4::from_shape_fn((c, n, h, w), |(ci, f, _, _)| dy[[f, ci]] * inv)
}
