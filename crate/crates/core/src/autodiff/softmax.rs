use alloc::vec;
use alloc::vec::Vec;

use super::{expect_rank, GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Per-pixel softmax over the channel axis of `x [N,C,H,W]`, max-shifted.
fn softmax_into<T: Real>(x: &[T], n: usize, c: usize, plane: usize, out: &mut [T]) {
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let mut m = T::neg_infinity();
            for ch in 0..c {
                m = m.max(x[base + ch * plane + p]);
            }
            let mut s = T::zero();
            for ch in 0..c {
                let e = (x[base + ch * plane + p] - m).exp();
                out[base + ch * plane + p] = e;
                s += e;
            }
            let inv = T::one() / s;
            for ch in 0..c {
                out[base + ch * plane + p] *= inv;
            }
        }
    }
}

impl<T: Real> Graph<T> {
    pub fn softmax_channels(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        expect_rank("softmax_per_pixel", x, 4)?;
        let (n, c, plane) = (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
        let mut out = vec![T::zero(); x.numel()];
        softmax_into(x.data(), n, c, plane, &mut out);
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.push(value, Op::SoftmaxChannels { input }, &[input]))
    }

    /// `scale * sum_pixels -ln softmax(logits)[target]`.
    ///
    /// `targets` holds one zero-based class index per pixel in `[N,H,W]`
    /// order.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize], scale: T) -> Result<Var> {
        const OP: &str = "softmax_cross_entropy";
        let x = self.value(logits);
        expect_rank(OP, x, 4)?;
        let (n, c, plane) = (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
        if targets.len() != n * plane {
            return Err(Error::config(
                OP,
                alloc::format!("{} targets for {} pixels", targets.len(), n * plane),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::Data(alloc::format!("class index {} outside 0..{}", bad, c)));
        }
        let mut probs = vec![T::zero(); x.numel()];
        softmax_into(x.data(), n, c, plane, &mut probs);
        let mut total = T::zero();
        for b in 0..n {
            let base = b * c * plane;
            for p in 0..plane {
                let t = targets[b * plane + p];
                // log-softmax via log-sum-exp; stays finite when the target
                // probability underflows.
                let mut m = T::neg_infinity();
                for ch in 0..c {
                    m = m.max(x.data()[base + ch * plane + p]);
                }
                let mut s = T::zero();
                for ch in 0..c {
                    s += (x.data()[base + ch * plane + p] - m).exp();
                }
                total += m + s.ln() - x.data()[base + t * plane + p];
            }
        }
        let value = Tensor::scalar(total * scale);
        Ok(self.push(
            value,
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                scale,
            },
            &[logits],
        ))
    }
}

pub(super) fn softmax_channels_backward<T: Real>(mut sink: GradSink<'_, T>, input: Var, out: &Tensor<T>, gout: &[T]) {
    let shape = out.shape();
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let y = out.data();
    let Some(dx) = sink.buf(input) else { return };
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let mut dot = T::zero();
            for ch in 0..c {
                let i = base + ch * plane + p;
                dot += gout[i] * y[i];
            }
            for ch in 0..c {
                let i = base + ch * plane + p;
                dx[i] += y[i] * (gout[i] - dot);
            }
        }
    }
}

pub(super) fn cross_entropy_backward<T: Real>(
    mut sink: GradSink<'_, T>,
    logits: Var,
    probs: &[T],
    targets: &[usize],
    scale: T,
    gout: &[T],
) {
    let shape: Vec<usize> = sink.value(logits).shape().to_vec();
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let g = gout[0] * scale;
    let Some(dx) = sink.buf(logits) else { return };
    for (d, &p) in dx.iter_mut().zip(probs) {
        *d += g * p;
    }
    for b in 0..n {
        for p in 0..plane {
            let t = targets[b * plane + p];
            dx[b * c * plane + t * plane + p] -= g;
        }
    }
}
