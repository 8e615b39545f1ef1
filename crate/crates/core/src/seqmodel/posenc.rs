//! Fixed sinusoidal position codes.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `PE[t, 2i] = sin(t / 10000^(2i/d))`, `PE[t, 2i+1] = cos(t / 10000^(2i/d))`.
pub fn positional_encoding<S: Scalar>(len: usize, d_model: usize) -> Result<Array2<S>> {
    if !d_model.is_multiple_of(2) {
        return Err(Error::OddDimension(d_model));
    }
    let mut pe = Array2::<S>::zeros((len, d_model));
    for i in 0..d_model / 2 {
        let denom = 10000f64.powf((2 * i) as f64 / d_model as f64);
        for t in 0..len {
            let angle = t as f64 / denom;
            pe[[t, 2 * i]] = S::lit(angle.sin());
            pe[[t, 2 * i + 1]] = S::lit(angle.cos());
        }
    }
    Ok(pe)
}
