use alloc::boxed::Box;
use alloc::vec::Vec;

use super::{GradSink, Graph, Op, Var};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

/// User-defined differentiable op.
///
/// Used by the gradient-check harness to register extra cases, including
/// deliberately broken ones that the harness must flag.
pub trait CustomOp<T: Real> {
    fn name(&self) -> &str;
    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;
    /// Gradient for each input given the output gradient.
    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>>;
}

impl<T: Real> Graph<T> {
    pub fn custom(&mut self, inputs: &[Var], op: Box<dyn CustomOp<T>>) -> Result<Var> {
        let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| self.value(v)).collect();
        let value = op.forward(&values)?;
        Ok(self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            inputs,
        ))
    }
}

pub(super) fn custom_backward<T: Real>(
    mut sink: GradSink<'_, T>,
    inputs: &[Var],
    op: &dyn CustomOp<T>,
    out: &Tensor<T>,
    gout: &[T],
) {
    let values: Vec<&Tensor<T>> = inputs.iter().map(|&v| sink.value(v)).collect();
    let grads = op.backward(&values, out, gout);
    for (&v, g) in inputs.iter().zip(&grads) {
        sink.add(v, g);
    }
}
