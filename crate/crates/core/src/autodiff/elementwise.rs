use alloc::vec::Vec;

use super::{GradSink, Graph, Op, Var};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Negative-side slope used by every LeakyReLU in the networks.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Scores entering binary cross-entropy are clamped to
/// `[SCORE_CLAMP, 1 - SCORE_CLAMP]`.
pub const SCORE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn leaky() -> Self {
        Activation::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn apply<T: Real>(&self, x: T) -> T {
        match *self {
            Activation::Relu => x.max(T::zero()),
            Activation::LeakyRelu { slope } => {
                if x > T::zero() {
                    x
                } else {
                    x * T::lit(slope)
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => {
                // Split by sign so exp never overflows.
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }
        }
    }
}

fn clamp_score<T: Real>(s: T) -> T {
    let lo = T::lit(SCORE_CLAMP);
    s.max(lo).min(T::one() - lo)
}

impl<T: Real> Graph<T> {
    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let value = self.value(input).map(|x| kind.apply(x));
        self.push(value, Op::Act { input, kind }, &[input])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::config(
                "add",
                alloc::format!("shapes {:?} and {:?} differ", x.shape(), y.shape()),
            ));
        }
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|x| x * factor);
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    /// Sum of all elements.
    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { input }, &[input])
    }

    /// `sum(input * weights)` against a constant weight vector.
    pub fn weighted_sum(&mut self, input: Var, weights: Vec<T>) -> Result<Var> {
        let x = self.value(input);
        if x.numel() != weights.len() {
            return Err(Error::config(
                "weighted_sum",
                alloc::format!("{} weights for {} elements", weights.len(), x.numel()),
            ));
        }
        let s = x.data().iter().zip(&weights).map(|(&a, &b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { input, weights }, &[input]))
    }

    /// Sum over all elements of `-[y ln s + (1-y) ln(1-s)]` with every score
    /// clamped away from 0 and 1.
    pub fn binary_cross_entropy(&mut self, scores: Var, label: T) -> Var {
        let s = self.value(scores);
        let total = s
            .data()
            .iter()
            .map(|&p| {
                let p = clamp_score(p);
                -(label * p.ln() + (T::one() - label) * (T::one() - p).ln())
            })
            .sum();
        self.push(Tensor::scalar(total), Op::Bce { scores, label }, &[scores])
    }

    /// View with a new shape; element order is unchanged.
    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        Ok(self.push(value, Op::Reshape { input }, &[input]))
    }

    /// Rows `start..end` along the leading (batch) axis.
    pub fn slice_outer(&mut self, input: Var, start: usize, end: usize) -> Result<Var> {
        let x = self.value(input);
        let value = x.slice_outer(start, end)?;
        let inner = if x.shape()[0] == 0 { 0 } else { x.numel() / x.shape()[0] };
        Ok(self.push(
            value,
            Op::SliceOuter {
                input,
                offset: start * inner,
            },
            &[input],
        ))
    }
}

pub(super) fn activation_backward<T: Real>(
    mut sink: GradSink<'_, T>,
    input: Var,
    kind: Activation,
    out: &Tensor<T>,
    gout: &[T],
) {
    let x = sink.value(input);
    let Some(dx) = sink.buf(input) else { return };
    match kind {
        Activation::Relu => {
            for ((d, &xi), &g) in dx.iter_mut().zip(x.data()).zip(gout) {
                if xi > T::zero() {
                    *d += g;
                }
            }
        }
        Activation::LeakyRelu { slope } => {
            let slope = T::lit(slope);
            for ((d, &xi), &g) in dx.iter_mut().zip(x.data()).zip(gout) {
                *d += if xi > T::zero() { g } else { g * slope };
            }
        }
        Activation::Tanh => {
            for ((d, &y), &g) in dx.iter_mut().zip(out.data()).zip(gout) {
                *d += g * (T::one() - y * y);
            }
        }
        Activation::Sigmoid => {
            for ((d, &y), &g) in dx.iter_mut().zip(out.data()).zip(gout) {
                *d += g * y * (T::one() - y);
            }
        }
    }
}

pub(super) fn bce_backward<T: Real>(mut sink: GradSink<'_, T>, scores: Var, label: T, gout: &[T]) {
    let s = sink.value(scores);
    let g = gout[0];
    let Some(ds) = sink.buf(scores) else { return };
    for (d, &p) in ds.iter_mut().zip(s.data()) {
        let p = clamp_score(p);
        *d += g * (-label / p + (T::one() - label) / (T::one() - p));
    }
}

/// Gradient of ops that copy a contiguous block of their input.
pub(super) fn passthrough_backward<T: Real>(mut sink: GradSink<'_, T>, input: Var, offset: usize, gout: &[T]) {
    if let Some(dx) = sink.buf(input) {
        for (d, &g) in dx[offset..offset + gout.len()].iter_mut().zip(gout) {
            *d += g;
        }
    }
}

pub(super) fn scale_backward<T: Real>(mut sink: GradSink<'_, T>, input: Var, factor: T, gout: &[T]) {
    if let Some(dx) = sink.buf(input) {
        for (d, &g) in dx.iter_mut().zip(gout) {
            *d += g * factor;
        }
    }
}

pub(super) fn sum_backward<T: Real>(mut sink: GradSink<'_, T>, input: Var, gout: &[T]) {
    if let Some(dx) = sink.buf(input) {
        for d in dx.iter_mut() {
            *d += gout[0];
        }
    }
}

pub(super) fn weighted_sum_backward<T: Real>(mut sink: GradSink<'_, T>, input: Var, weights: &[T], gout: &[T]) {
    if let Some(dx) = sink.buf(input) {
        for (d, &w) in dx.iter_mut().zip(weights) {
            *d += gout[0] * w;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(kind: Activation, x: f64) -> f64 {
        let mut g = Graph::<f64>::new();
        let v = g.input(Tensor::scalar(x));
        let y = g.activation(v, kind);
        g.value(y).item()
    }

    #[test]
    fn scalar_activation_values() {
        assert_eq!(act(Activation::Relu, -1.0), 0.0);
        assert_eq!(act(Activation::Relu, 2.0), 2.0);
        assert!((act(Activation::leaky(), -1.0) - (-0.2)).abs() < 1e-15);
        assert_eq!(act(Activation::leaky(), 3.0), 3.0);
        assert_eq!(act(Activation::Tanh, 0.0), 0.0);
        assert_eq!(act(Activation::Sigmoid, 0.0), 0.5);
    }

    #[test]
    fn bounded_activations_stay_in_range() {
        for &x in &[-40.0, -3.0, -1e-3, 0.0, 2.5, 40.0] {
            let t = act(Activation::Tanh, x);
            assert!((-1.0..=1.0).contains(&t));
            let s = act(Activation::Sigmoid, x);
            assert!((0.0..=1.0).contains(&s) && s.is_finite());
        }
        assert!(act(Activation::Sigmoid, -800.0) >= 0.0);
    }

    #[test]
    fn bce_matches_closed_form() {
        let mut g = Graph::<f64>::new();
        let s = g.input(Tensor::new([2], alloc::vec![0.5, 0.9]).unwrap());
        let l = g.binary_cross_entropy(s, 0.0);
        let expect = -(0.5f64).ln() - (0.1f64).ln();
        assert!((g.value(l).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn bce_clamps_extremes() {
        let mut g = Graph::<f64>::new();
        let s = g.input(Tensor::new([2], alloc::vec![0.0, 1.0]).unwrap());
        let l = g.binary_cross_entropy(s, 1.0);
        let v = g.value(l).item();
        assert!(v.is_finite());
        assert!((v + (SCORE_CLAMP).ln()).abs() < 1e-6);
    }
}
