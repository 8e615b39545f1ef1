//! AdamW with decoupled weight decay and bias-corrected moments.

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

pub struct AdamW<S> {
    pub config: AdamWConfig,
    step: u64,
    m: ParamSet<S>,
    v: ParamSet<S>,
}

impl<S: Scalar> AdamW<S> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: ParamSet::new(),
            v: ParamSet::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Updates every tensor in `names`; a tensor without a gradient entry is
    /// treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet<S>, grads: &ParamSet<S>, names: &[String], lr: f64) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = S::lit(1.0 - c.beta1.powi(t));
        let bc2 = S::lit(1.0 - c.beta2.powi(t));
        let (b1, b2) = (S::lit(c.beta1), S::lit(c.beta2));
        let (one, eps) = (S::one(), S::lit(c.eps));
        let lr_s = S::lit(lr);
        let decay = S::lit(1.0 - lr * c.weight_decay);
        for name in names {
            let theta = params.get_mut(name)?;
            if !self.m.contains(name) {
                self.m.insert_trainable(name.clone(), ArrayD::<S>::zeros(theta.raw_dim()));
                self.v.insert_trainable(name.clone(), ArrayD::<S>::zeros(theta.raw_dim()));
            }
            let zeros;
            let g = match grads.get(name) {
                Ok(g) => g,
                Err(_) => {
                    zeros = ArrayD::<S>::zeros(theta.raw_dim());
                    &zeros
                }
            };
            let m = self.m.get_mut(name)?;
            let v = self.v.get_mut(name)?;
            Zip::from(&mut *theta)
                .and(&mut *m)
                .and(&mut *v)
                .and(g)
                .for_each(|th, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *th = *th * decay - lr_s * mhat / (vhat.sqrt() + eps);
                });
        }
        Ok(())
    }
}
