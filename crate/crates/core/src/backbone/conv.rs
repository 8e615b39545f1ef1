//! 2-D convolution via im2col + gemm on channel-major `(C, N, H, W)` tensors.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array4, ArrayView2, ArrayView4, ArrayViewMut2};

use crate::scalar::Scalar;

/// Upper bound on im2col buffer elements; frames are processed in chunks below it.
const COLS_BUDGET: usize = 1 << 23;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub const fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }

    pub fn out_len(&self, input: usize, kernel: usize) -> usize {
        (input + 2 * self.pad - kernel) / self.stride + 1
    }
}

fn is_pointwise(kh: usize, kw: usize, geo: ConvGeometry) -> bool {
    kh == 1 && kw == 1 && geo.stride == 1 && geo.pad == 0
}

fn frames_per_chunk(rows: usize, plane: usize, n: usize) -> usize {
    (COLS_BUDGET / (rows * plane).max(1)).clamp(1, n.max(1))
}

/// Fills `cols` (rows = `(c, ki, kj)`, columns = `(frame, oy, ox)`) for frames `n0..n0 + chunk`.
fn im2col<S: Scalar>(
    x: ArrayView4<S>,
    kh: usize,
    kw: usize,
    geo: ConvGeometry,
    n0: usize,
    chunk: usize,
    cols: &mut Array2<S>,
) {
    let (c_in, _, h, w) = x.dim();
    let oh = geo.out_len(h, kh);
    let ow = geo.out_len(w, kw);
    let plane = oh * ow;
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let mut dst = cols.row_mut(row);
                let dst = dst.as_slice_mut().expect("contiguous im2col row");
                for f in 0..chunk {
                    let src = x.slice(s![c, n0 + f, .., ..]);
                    let base = f * plane;
                    for oy in 0..oh {
                        let iy = (oy * geo.stride + ki) as isize - geo.pad as isize;
                        let out = &mut dst[base + oy * ow..base + (oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out.fill(S::zero());
                            continue;
                        }
                        let src_row = src.row(iy as usize);
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * geo.stride + kj) as isize - geo.pad as isize;
                            *o = if ix < 0 || ix >= w as isize {
                                S::zero()
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `cols` back into `dx` for frames `n0..n0 + chunk`.
fn col2im<S: Scalar>(
    cols: ArrayView2<S>,
    kh: usize,
    kw: usize,
    geo: ConvGeometry,
    n0: usize,
    chunk: usize,
    dx: &mut Array4<S>,
) {
    let (c_in, _, h, w) = dx.dim();
    let oh = geo.out_len(h, kh);
    let ow = geo.out_len(w, kw);
    let plane = oh * ow;
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src = cols.row(row);
                for f in 0..chunk {
                    let mut dst = dx.slice_mut(s![c, n0 + f, .., ..]);
                    let base = f * plane;
                    for oy in 0..oh {
                        let iy = (oy * geo.stride + ki) as isize - geo.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let mut dst_row = dst.row_mut(iy as usize);
                        for ox in 0..ow {
                            let ix = (ox * geo.stride + kj) as isize - geo.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += src[base + oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn as_matrix<S>(a: &Array4<S>) -> ArrayView2<'_, S> {
    let (c, n, h, w) = a.dim();
    a.view()
        .into_shape_with_order((c, n * h * w))
        .expect("standard layout")
}

fn as_matrix_mut<S>(a: &mut Array4<S>) -> ArrayViewMut2<'_, S> {
    let (c, n, h, w) = a.dim();
    a.view_mut()
        .into_shape_with_order((c, n * h * w))
        .expect("standard layout")
}

fn kernel_matrix<S: Scalar>(weight: ArrayView4<S>) -> Array2<S> {
    let (co, ci, kh, kw) = weight.dim();
    weight
        .to_owned()
        .into_shape_with_order((co, ci * kh * kw))
        .expect("kernel reshape")
}

/// Convolves `x` `(C_in, N, H, W)` with `weight` `(C_out, C_in, kh, kw)`; no bias.
pub fn conv2d_forward<S: Scalar>(x: ArrayView4<S>, weight: ArrayView4<S>, geo: ConvGeometry) -> Array4<S> {
    let (c_in, n, h, w) = x.dim();
    let (c_out, wc, kh, kw) = weight.dim();
    assert_eq!(c_in, wc, "conv input channels");
    let oh = geo.out_len(h, kh);
    let ow = geo.out_len(w, kw);
    let plane = oh * ow;
    let wmat = kernel_matrix(weight);
    let mut y = Array4::<S>::zeros((c_out, n, oh, ow));

    if is_pointwise(kh, kw, geo) {
        let x = x.as_standard_layout();
        let xm = x.view().into_shape_with_order((c_in, n * h * w)).expect("layout");
        general_mat_mul(S::one(), &wmat, &xm, S::zero(), &mut as_matrix_mut(&mut y));
        return y;
    }

    let rows = c_in * kh * kw;
    let chunk = frames_per_chunk(rows, plane, n);
    let mut cols = Array2::<S>::zeros((rows, chunk * plane));
    let mut ym = as_matrix_mut(&mut y);
    let mut n0 = 0;
    while n0 < n {
        let len = chunk.min(n - n0);
        im2col(x, kh, kw, geo, n0, len, &mut cols);
        let cview = cols.slice(s![.., ..len * plane]);
        let mut out = ym.slice_mut(s![.., n0 * plane..(n0 + len) * plane]);
        general_mat_mul(S::one(), &wmat, &cview, S::zero(), &mut out);
        n0 += len;
    }
    y
}

/// Gradients of [`conv2d_forward`] with respect to its input and kernel.
pub fn conv2d_backward<S: Scalar>(
    x: ArrayView4<S>,
    weight: ArrayView4<S>,
    geo: ConvGeometry,
    dy: &Array4<S>,
    need_dx: bool,
) -> (Option<Array4<S>>, Array4<S>) {
    let (c_in, n, h, w) = x.dim();
    let (c_out, _, kh, kw) = weight.dim();
    let oh = geo.out_len(h, kh);
    let ow = geo.out_len(w, kw);
    let plane = oh * ow;
    let wmat = kernel_matrix(weight);
    let rows = c_in * kh * kw;
    let mut dw = Array2::<S>::zeros((c_out, rows));
    let dym = as_matrix(dy);

    if is_pointwise(kh, kw, geo) {
        let x = x.as_standard_layout();
        let xm = x.view().into_shape_with_order((c_in, n * h * w)).expect("layout");
        general_mat_mul(S::one(), &dym, &xm.t(), S::zero(), &mut dw);
        let dx = need_dx.then(|| {
            let mut dx = Array4::<S>::zeros((c_in, n, h, w));
            general_mat_mul(S::one(), &wmat.t(), &dym, S::zero(), &mut as_matrix_mut(&mut dx));
            dx
        });
        return (dx, dw.into_shape_with_order((c_out, c_in, kh, kw)).expect("dw"));
    }

    let chunk = frames_per_chunk(rows, plane, n);
    let mut cols = Array2::<S>::zeros((rows, chunk * plane));
    let mut dcols = Array2::<S>::zeros((rows, chunk * plane));
    let mut dx = need_dx.then(|| Array4::<S>::zeros((c_in, n, h, w)));
    let mut n0 = 0;
    while n0 < n {
        let len = chunk.min(n - n0);
        let dyc = dym.slice(s![.., n0 * plane..(n0 + len) * plane]);
        im2col(x, kh, kw, geo, n0, len, &mut cols);
        let cview = cols.slice(s![.., ..len * plane]);
        general_mat_mul(S::one(), &dyc, &cview.t(), S::one(), &mut dw);
        if let Some(dx) = dx.as_mut() {
            let mut dc = dcols.slice_mut(s![.., ..len * plane]);
            general_mat_mul(S::one(), &wmat.t(), &dyc, S::zero(), &mut dc);
            col2im(dcols.slice(s![.., ..len * plane]), kh, kw, geo, n0, len, dx);
        }
        n0 += len;
    }
    (dx, dw.into_shape_with_order((c_out, c_in, kh, kw)).expect("dw"))
}
