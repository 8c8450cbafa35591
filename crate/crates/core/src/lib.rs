//! Engine for a factored generative pipeline: a structure generator that
//! produces surface-normal maps from noise, a style generator that renders
//! images conditioned on those normals, and the training phases that couple
//! them.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, checkpoints on
//! disk and the command-line driver live in the companion `s2gan` crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_op_in_unsafe_fn)]

extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod gradcheck;
pub mod losses;
pub mod networks;
pub mod real;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod train;

pub use autodiff::{Activation, Graph, Var};
pub use error::{Error, Result};
pub use real::Real;
pub use tensor::Tensor;

/// Dimension of both noise vectors (structure and style).
pub const NOISE_DIM: usize = 100;

/// Number of quantized surface-normal classes.
pub const NUM_CLASSES: usize = 40;
