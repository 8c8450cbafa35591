//! Adam with bias correction.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_BETA1: f64 = 0.5;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }
}

/// Moments for one network's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Updates applied so far.
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        AdamState {
            config,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }

    /// Zero the moments and the step counter.
    pub fn reset(&mut self) {
        self.step = 0;
        for t in self.m.iter_mut().chain(self.v.iter_mut()) {
            t.data_mut().fill(T::zero());
        }
    }

    /// One update. `grads[i]` is `None` for a parameter the loss did not
    /// reach, which counts as a zero gradient.
    ///
    /// Every gradient is checked before anything is written, so a
    /// non-finite gradient leaves parameters and moments untouched.
    pub fn step(&mut self, names: &[String], params: &mut [Tensor<T>], grads: &[Option<&[T]>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() || names.len() != params.len() {
            return Err(Error::config(
                "adam_step",
                alloc::format!(
                    "{} parameters, {} names, {} gradients, {} moments",
                    params.len(),
                    names.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for ((name, p), (g, m)) in names.iter().zip(params.iter()).zip(grads.iter().zip(&self.m)) {
            if p.shape() != m.shape() || g.is_some_and(|g| g.len() != p.numel()) {
                return Err(Error::config(
                    "adam_step",
                    alloc::format!("shape mismatch for {}", name),
                ));
            }
            if let Some(g) = g {
                if g.iter().any(|x| !x.is_finite()) {
                    // NaN wins over any magnitude.
                    let max_abs = g.iter().map(|&x| x.to_f64().abs()).fold(0.0, |a: f64, b| {
                        if a.is_nan() || b.is_nan() {
                            f64::NAN
                        } else {
                            a.max(b)
                        }
                    });
                    return Err(Error::NonFiniteGradient {
                        param: name.clone(),
                        max_abs,
                    });
                }
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - Float::powi(c.beta1, t);
        let bc2 = 1.0 - Float::powi(c.beta2, t);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (ob1, ob2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let step_size = T::lit(c.lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(c.eps);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let p = p.data_mut();
            let (m, v) = (m.data_mut(), v.data_mut());
            for i in 0..p.len() {
                let gi = g.map_or(T::zero(), |g| g[i]);
                m[i] = b1 * m[i] + ob1 * gi;
                v[i] = b2 * v[i] + ob2 * gi * gi;
                p[i] -= step_size * m[i] / ((v[i] * inv_bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
