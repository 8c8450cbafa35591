//! Seeded random streams.
//!
//! Every consumer derives its own ChaCha stream from a base seed and a
//! purpose tag, so training can resume at any iteration without replaying
//! earlier draws.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::real::Real;
use crate::tensor::Tensor;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates nearby seeds.
pub fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream for `(seed, tag, index)`.
pub fn stream(seed: u64, tag: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(tag)) ^ index))
}

/// Hash a short ASCII tag into a stream tag.
pub const fn tag(name: &str) -> u64 {
    let bytes = name.as_bytes();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut i = 0;
    while i < bytes.len() {
        h ^= bytes[i] as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
        i += 1;
    }
    h
}

/// `rows x dim` noise drawn from uniform(-1, 1).
pub fn uniform_noise<T: Real>(rng: &mut StreamRng, rows: usize, dim: usize) -> Tensor<T> {
    let data: Vec<T> = (0..rows * dim)
        .map(|_| T::lit(rng.gen_range(-1.0f64..1.0)))
        .collect();
    Tensor::new([rows, dim], data).expect("shape matches data")
}

pub fn gaussian<T: Real>(rng: &mut StreamRng, shape: &[usize], std: f64) -> Tensor<T> {
    let normal = Normal::new(0.0f64, std).expect("std is positive");
    Tensor::from_fn(shape, |_| T::lit(normal.sample(rng)))
}
