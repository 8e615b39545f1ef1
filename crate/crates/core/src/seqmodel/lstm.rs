//! LSTM recurrences over `(B*T, in)` sequences, rows ordered batch-major.
//!
//! Gate order inside the fused `4H` axis is input, forget, cell, output.
//! Each direction owns `{prefix}.w_ih` `(in, 4H)`, `{prefix}.w_hh` `(H, 4H)`
//! and `{prefix}.bias` `(4H)`.

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::{sigmoid, Scalar};

struct Step<S> {
    rows: Vec<usize>,
    /// Post-activation gates `(B, 4H)`.
    gates: Array2<S>,
    c_prev: Array2<S>,
    h_prev: Array2<S>,
    tanh_c: Array2<S>,
}

pub struct DirectionCache<S> {
    x: Array2<S>,
    steps: Vec<Step<S>>,
}

fn time_rows(batch: usize, seq_len: usize, t: usize) -> Vec<usize> {
    (0..batch).map(|b| b * seq_len + t).collect()
}

/// Runs one direction with zero initial state; `reverse` walks `t = T-1 .. 0`.
pub fn lstm_direction_forward<S: Scalar>(
    params: &ParamSet<S>,
    prefix: &str,
    x: ArrayView2<S>,
    batch: usize,
    seq_len: usize,
    reverse: bool,
) -> Result<(Array2<S>, DirectionCache<S>)> {
    let w_ih = params.mat(&format!("{prefix}.w_ih"))?;
    let w_hh = params.mat(&format!("{prefix}.w_hh"))?;
    let bias = params.vec(&format!("{prefix}.bias"))?;
    let hidden = w_hh.nrows();
    if x.ncols() != w_ih.nrows() {
        return Err(Error::shape(format!("{prefix} input width"), &[w_ih.nrows()], &[x.ncols()]));
    }
    if x.nrows() != batch * seq_len {
        return Err(Error::shape(format!("{prefix} rows"), &[batch * seq_len], &[x.nrows()]));
    }
    let mut xw = x.dot(&w_ih);
    xw += &bias;
    let mut out = Array2::<S>::zeros((batch * seq_len, hidden));
    let mut h = Array2::<S>::zeros((batch, hidden));
    let mut c = Array2::<S>::zeros((batch, hidden));
    let mut steps = Vec::with_capacity(seq_len);
    let order: Vec<usize> = if reverse {
        (0..seq_len).rev().collect()
    } else {
        (0..seq_len).collect()
    };
    for t in order {
        let rows = time_rows(batch, seq_len, t);
        let mut gates = xw.select(Axis(0), &rows);
        gates += &h.dot(&w_hh);
        {
            let (mut ifg, mut o) = gates.view_mut().split_at(Axis(1), 3 * hidden);
            let (mut i_f, mut g) = ifg.view_mut().split_at(Axis(1), 2 * hidden);
            i_f.mapv_inplace(sigmoid);
            g.mapv_inplace(|v| v.tanh());
            o.mapv_inplace(sigmoid);
        }
        let i = gates.slice(s![.., 0..hidden]);
        let f = gates.slice(s![.., hidden..2 * hidden]);
        let g = gates.slice(s![.., 2 * hidden..3 * hidden]);
        let o = gates.slice(s![.., 3 * hidden..]);
        let c_new = &f * &c + &i * &g;
        let tanh_c = c_new.mapv(|v| v.tanh());
        let h_new = &o * &tanh_c;
        for (k, &r) in rows.iter().enumerate() {
            out.row_mut(r).assign(&h_new.row(k));
        }
        steps.push(Step {
            rows,
            gates,
            c_prev: std::mem::replace(&mut c, c_new),
            h_prev: std::mem::replace(&mut h, h_new),
            tanh_c,
        });
    }
    Ok((
        out,
        DirectionCache {
            x: x.to_owned(),
            steps,
        },
    ))
}

/// Backpropagation through time for one direction; returns the input gradient.
pub fn lstm_direction_backward<S: Scalar>(
    params: &ParamSet<S>,
    grads: &mut ParamSet<S>,
    prefix: &str,
    cache: &DirectionCache<S>,
    dout: ArrayView2<S>,
) -> Result<Array2<S>> {
    let w_ih = params.mat(&format!("{prefix}.w_ih"))?;
    let w_hh = params.mat(&format!("{prefix}.w_hh"))?;
    let hidden = w_hh.nrows();
    let batch = cache.steps.first().map_or(0, |s| s.rows.len());
    let mut dxw = Array2::<S>::zeros((cache.x.nrows(), 4 * hidden));
    let mut dw_hh = Array2::<S>::zeros(w_hh.raw_dim());
    let mut dh_next = Array2::<S>::zeros((batch, hidden));
    let mut dc_next = Array2::<S>::zeros((batch, hidden));
    let one = S::one();
    for step in cache.steps.iter().rev() {
        let dh = dout.select(Axis(0), &step.rows) + &dh_next;
        let gates = &step.gates;
        let mut dgates = Array2::<S>::zeros(gates.raw_dim());
        let mut dc = Array2::<S>::zeros((batch, hidden));
        for b in 0..batch {
            for j in 0..hidden {
                let i = gates[[b, j]];
                let f = gates[[b, hidden + j]];
                let g = gates[[b, 2 * hidden + j]];
                let o = gates[[b, 3 * hidden + j]];
                let tc = step.tanh_c[[b, j]];
                let dhv = dh[[b, j]];
                let dcv = dhv * o * (one - tc * tc) + dc_next[[b, j]];
                dgates[[b, j]] = dcv * g * i * (one - i);
                dgates[[b, hidden + j]] = dcv * step.c_prev[[b, j]] * f * (one - f);
                dgates[[b, 2 * hidden + j]] = dcv * i * (one - g * g);
                dgates[[b, 3 * hidden + j]] = dhv * tc * o * (one - o);
                dc[[b, j]] = dcv * f;
            }
        }
        dw_hh += &step.h_prev.t().dot(&dgates);
        dh_next = dgates.dot(&w_hh.t());
        dc_next = dc;
        for (k, &r) in step.rows.iter().enumerate() {
            dxw.row_mut(r).assign(&dgates.row(k));
        }
    }
    grads.accumulate(&format!("{prefix}.w_ih"), cache.x.t().dot(&dxw));
    grads.accumulate(&format!("{prefix}.w_hh"), dw_hh);
    grads.accumulate(&format!("{prefix}.bias"), dxw.sum_axis(Axis(0)));
    Ok(dxw.dot(&w_ih.t()))
}

pub struct LstmCache<S> {
    fwd: DirectionCache<S>,
    bwd: Option<DirectionCache<S>>,
}

/// Forward direction under `{prefix}.fwd`, optional reverse direction under
/// `{prefix}.bwd`; output rows are `[h_fwd ; h_bwd]`.
pub fn lstm_forward<S: Scalar>(
    params: &ParamSet<S>,
    prefix: &str,
    x: ArrayView2<S>,
    batch: usize,
    seq_len: usize,
    bidirectional: bool,
) -> Result<(Array2<S>, LstmCache<S>)> {
    let (hf, fwd) = lstm_direction_forward(params, &format!("{prefix}.fwd"), x, batch, seq_len, false)?;
    if !bidirectional {
        return Ok((hf, LstmCache { fwd, bwd: None }));
    }
    let (hb, bwd) = lstm_direction_forward(params, &format!("{prefix}.bwd"), x, batch, seq_len, true)?;
    let out = ndarray::concatenate(Axis(1), &[hf.view(), hb.view()]).expect("same row count");
    Ok((out, LstmCache { fwd, bwd: Some(bwd) }))
}

pub fn lstm_backward<S: Scalar>(
    params: &ParamSet<S>,
    grads: &mut ParamSet<S>,
    prefix: &str,
    cache: &LstmCache<S>,
    dout: ArrayView2<S>,
) -> Result<Array2<S>> {
    match &cache.bwd {
        None => lstm_direction_backward(params, grads, &format!("{prefix}.fwd"), &cache.fwd, dout),
        Some(bwd) => {
            let h = dout.ncols() / 2;
            let mut dx = lstm_direction_backward(
                params,
                grads,
                &format!("{prefix}.fwd"),
                &cache.fwd,
                dout.slice(s![.., ..h]),
            )?;
            dx += &lstm_direction_backward(params, grads, &format!("{prefix}.bwd"), bwd, dout.slice(s![.., h..]))?;
            Ok(dx)
        }
    }
}
