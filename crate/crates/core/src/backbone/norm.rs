//! Batch normalization over the `(N, H, W)` axes of channel-major tensors.

use ndarray::{Array1, Array4, ArrayView1, Axis, Zip};

use crate::scalar::Scalar;

/// Which statistics batch normalization uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormMode {
    /// Normalize with the current batch's statistics and report them for the running averages.
    Batch,
    /// Normalize with the stored running statistics.
    Running,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<S> {
    pub xhat: Array4<S>,
    pub inv_std: Array1<S>,
    pub mode: NormMode,
}

/// Batch mean and unbiased variance, to be folded into the running averages.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub mean: Array1<S>,
    pub var: Array1<S>,
}

pub fn batchnorm_forward<S: Scalar>(
    x: &Array4<S>,
    scale: ArrayView1<S>,
    shift: ArrayView1<S>,
    running_mean: ArrayView1<S>,
    running_var: ArrayView1<S>,
    mode: NormMode,
    eps: f64,
) -> (Array4<S>, BatchNormCache<S>, Option<BatchStats<S>>) {
    let channels = x.len_of(Axis(0));
    let count = x.len() / channels.max(1);
    let eps = S::lit(eps);
    let mut xhat = Array4::<S>::zeros(x.raw_dim());
    let mut y = Array4::<S>::zeros(x.raw_dim());
    let mut inv_std = Array1::<S>::zeros(channels);
    let mut stats = (mode == NormMode::Batch).then(|| BatchStats {
        mean: Array1::zeros(channels),
        var: Array1::zeros(channels),
    });

    for c in 0..channels {
        let xc = x.index_axis(Axis(0), c);
        let (mean, var) = match mode {
            NormMode::Batch => {
                let n = S::lit(count as f64);
                let mean = xc.sum() / n;
                let var = xc.fold(S::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
                if let Some(st) = stats.as_mut() {
                    st.mean[c] = mean;
                    st.var[c] = if count > 1 {
                        var * n / S::lit((count - 1) as f64)
                    } else {
                        var
                    };
                }
                (mean, var)
            }
            NormMode::Running => (running_mean[c], running_var[c]),
        };
        let istd = S::one() / (var + eps).sqrt();
        inv_std[c] = istd;
        let (g, b) = (scale[c], shift[c]);
        Zip::from(xhat.index_axis_mut(Axis(0), c))
            .and(y.index_axis_mut(Axis(0), c))
            .and(xc)
            .for_each(|h, o, &v| {
                *h = (v - mean) * istd;
                *o = g * *h + b;
            });
    }
    (y, BatchNormCache { xhat, inv_std, mode }, stats)
}

/// Returns `(dx, dscale, dshift)`.
pub fn batchnorm_backward<S: Scalar>(
    cache: &BatchNormCache<S>,
    scale: ArrayView1<S>,
    dy: &Array4<S>,
) -> (Array4<S>, Array1<S>, Array1<S>) {
    let channels = dy.len_of(Axis(0));
    let count = S::lit((dy.len() / channels.max(1)) as f64);
    let mut dx = Array4::<S>::zeros(dy.raw_dim());
    let mut dscale = Array1::<S>::zeros(channels);
    let mut dshift = Array1::<S>::zeros(channels);
    for c in 0..channels {
        let dyc = dy.index_axis(Axis(0), c);
        let xh = cache.xhat.index_axis(Axis(0), c);
        let sum_dy = dyc.sum();
        let sum_dy_xh = Zip::from(&dyc).and(&xh).fold(S::zero(), |acc, &a, &b| acc + a * b);
        dscale[c] = sum_dy_xh;
        dshift[c] = sum_dy;
        let k = scale[c] * cache.inv_std[c];
        let dxc = dx.index_axis_mut(Axis(0), c);
        match cache.mode {
            NormMode::Batch => {
                let mean_dy = sum_dy / count;
                let mean_dy_xh = sum_dy_xh / count;
                Zip::from(dxc).and(&dyc).and(&xh).for_each(|d, &g, &h| {
                    *d = k * (g - mean_dy - h * mean_dy_xh);
                });
            }
            NormMode::Running => {
                Zip::from(dxc).and(&dyc).for_each(|d, &g| *d = k * g);
            }
        }
    }
    (dx, dscale, dshift)
}
