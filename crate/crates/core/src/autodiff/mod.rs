//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every value produced during one forward pass. Nodes are
//! appended in creation order, which is a topological order, so
//! [`Graph::backward`] walks them once in reverse.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

mod conv;
mod custom;
mod dense;
mod elementwise;
mod norm;
mod softmax;
mod spatial;

pub use conv::{conv2d_output_size, conv_transpose2d_output_size};
pub use custom::CustomOp;
pub use elementwise::{Activation, DEFAULT_LEAKY_SLOPE, SCORE_CLAMP};
pub use norm::{BatchNormMode, BN_EPS, BN_MOMENTUM};

pub(crate) use conv::ConvGeom;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T: Real> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Act {
        input: Var,
        kind: Activation,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        train: bool,
    },
    SoftmaxChannels {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
        scale: T,
    },
    Bce {
        scores: Var,
        label: T,
    },
    Resize {
        input: Var,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Reshape {
        input: Var,
    },
    SliceOuter {
        input: Var,
        offset: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    WeightedSum {
        input: Var,
        weights: Vec<T>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp<T>>,
    },
}

impl<T: Real> Op<T> {
    /// Short identifier, used in reports.
    pub(crate) fn kind(&self) -> &str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "fractionally_strided_conv2d",
            Op::Linear { .. } => "fully_connected",
            Op::Act { .. } => "activation",
            Op::BatchNorm { .. } => "batch_norm",
            Op::SoftmaxChannels { .. } => "softmax_per_pixel",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Bce { .. } => "binary_cross_entropy",
            Op::Resize { .. } => "bilinear_upsample",
            Op::MaxPool { .. } => "max_pool2d",
            Op::Concat { .. } => "concat_channels",
            Op::Reshape { .. } => "reshape",
            Op::SliceOuter { .. } => "slice_outer",
            Op::Add { .. } => "add",
            Op::Scale { .. } => "scale",
            Op::Sum { .. } => "sum",
            Op::WeightedSum { .. } => "weighted_sum",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

pub(crate) struct Node<T: Real> {
    pub(crate) value: Tensor<T>,
    pub(crate) grad: Option<Vec<T>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Op<T>,
}

/// Records values and the ops that produced them.
pub struct Graph<T: Real> {
    pub(crate) nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf node. Parameters use `requires_grad = true`; data uses `false`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v` as a constant: no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.input(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last `backward` root with respect to `v`.
    ///
    /// `None` when `v` does not require grad or was not reached.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Gradient as a tensor shaped like `v`; zeros when absent.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("grad has node shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn op_kind(&self, v: Var) -> &str {
        self.nodes[v.0].op.kind()
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from a single-element `root`.
    ///
    /// Clears gradients from any previous sweep first. Every node reachable
    /// from `root` that requires grad ends up with a gradient buffer.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.numel() != 1 {
            return Err(Error::config(
                "backward",
                alloc::format!("root must be a scalar, got shape {:?}", self.shape(root)),
            ));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);
        for i in (0..=root.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backward_node(i, &gout, &mut grads);
            }
            grads[i] = Some(gout);
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = g;
            }
        }
        Ok(())
    }

    fn backward_node(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let sink = GradSink {
            nodes: &self.nodes,
            grads,
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            } => conv::conv2d_backward(sink, *input, *kernel, *bias, geom, gout),
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
            } => conv::conv_transpose2d_backward(sink, *input, *kernel, *bias, geom, gout),
            Op::Linear {
                input,
                weight,
                bias,
            } => dense::linear_backward(sink, *input, *weight, *bias, gout),
            Op::Act { input, kind } => {
                elementwise::activation_backward(sink, *input, *kind, &node.value, gout)
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => norm::batch_norm_backward(sink, *input, *gamma, *beta, xhat, inv_std, *train, gout),
            Op::SoftmaxChannels { input } => {
                softmax::softmax_channels_backward(sink, *input, &node.value, gout)
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                targets,
                scale,
            } => softmax::cross_entropy_backward(sink, *logits, probs, targets, *scale, gout),
            Op::Bce { scores, label } => elementwise::bce_backward(sink, *scores, *label, gout),
            Op::Resize { input } => spatial::resize_backward(sink, *input, &node.value, gout),
            Op::MaxPool { input, argmax } => spatial::max_pool_backward(sink, *input, argmax, gout),
            Op::Concat { a, b } => spatial::concat_backward(sink, *a, *b, gout),
            Op::Reshape { input } => elementwise::passthrough_backward(sink, *input, 0, gout),
            Op::SliceOuter { input, offset } => {
                elementwise::passthrough_backward(sink, *input, *offset, gout)
            }
            Op::Add { a, b } => {
                let mut sink = sink;
                sink.add(*a, gout);
                sink.add(*b, gout);
            }
            Op::Scale { input, factor } => elementwise::scale_backward(sink, *input, *factor, gout),
            Op::Sum { input } => elementwise::sum_backward(sink, *input, gout),
            Op::WeightedSum { input, weights } => {
                elementwise::weighted_sum_backward(sink, *input, weights, gout)
            }
            Op::Custom { inputs, op } => custom::custom_backward(sink, inputs, op.as_ref(), &node.value, gout),
        }
    }
}

/// Accumulates input gradients during a backward step.
pub(crate) struct GradSink<'a, T: Real> {
    nodes: &'a [Node<T>],
    grads: &'a mut [Option<Vec<T>>],
}

impl<'a, T: Real> GradSink<'a, T> {
    pub(crate) fn value(&self, v: Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    pub(crate) fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Mutable gradient buffer for `v`, zero-initialized on first use.
    /// `None` if `v` does not require grad.
    pub(crate) fn buf(&mut self, v: Var) -> Option<&mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(self.grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    pub(crate) fn add(&mut self, v: Var, g: &[T]) {
        if let Some(buf) = self.buf(v) {
            for (b, &x) in buf.iter_mut().zip(g) {
                *b += x;
            }
        }
    }
}

pub(crate) fn expect_rank<T: Real>(op: &'static str, t: &Tensor<T>, rank: usize) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::config(
            op,
            alloc::format!("expected rank {} input, got shape {:?}", rank, t.shape()),
        ));
    }
    Ok(())
}
