//! Adversarial, pixel-wise and combined losses.
//!
//! Every loss is a sum over the samples it receives (not a mean). The
//! discriminator losses take the real half and the generated half of a batch
//! as separate score tensors.

use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::{Graph, Var, SCORE_CLAMP};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::NUM_CLASSES;

/// Default weight of the style path in the joint structure-generator loss.
pub const DEFAULT_LAMBDA: f64 = 0.1;

/// `-[y ln s + (1-y) ln(1-s)]` with `s` clamped to `[1e-7, 1-1e-7]`.
pub fn binary_cross_entropy(score: f64, label: f64) -> f64 {
    let s = score.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
    -(label * Float::ln(s) + (1.0 - label) * Float::ln(1.0 - s))
}

/// Discriminator loss: real scores labelled 1, generated scores labelled 0.
///
/// Callers detach the generated samples before scoring them so that no
/// gradient reaches the generator.
pub fn gan_d_loss<T: Real>(g: &mut Graph<T>, real_scores: Var, fake_scores: Var) -> Result<Var> {
    let real = g.binary_cross_entropy(real_scores, T::one());
    let fake = g.binary_cross_entropy(fake_scores, T::zero());
    g.add(real, fake)
}

/// Generator loss: generated scores labelled 1.
pub fn gan_g_loss<T: Real>(g: &mut Graph<T>, fake_scores: Var) -> Var {
    g.binary_cross_entropy(fake_scores, T::one())
}

/// Conditional discriminator loss. Positives are real images paired with
/// their own normals; negatives are generated images paired with the normals
/// they were generated from.
pub fn cond_d_loss<T: Real>(g: &mut Graph<T>, real_pair_scores: Var, fake_pair_scores: Var) -> Result<Var> {
    gan_d_loss(g, real_pair_scores, fake_pair_scores)
}

/// Conditional generator loss.
pub fn cond_g_loss<T: Real>(g: &mut Graph<T>, fake_pair_scores: Var) -> Var {
    gan_g_loss(g, fake_pair_scores)
}

/// Convert 1-based labels to 0-based class indices.
pub fn zero_based(labels: &[u8]) -> Result<Vec<usize>> {
    labels
        .iter()
        .map(|&l| {
            if (1..=NUM_CLASSES as u8).contains(&l) {
                Ok(l as usize - 1)
            } else {
                Err(Error::Data(alloc::format!(
                    "normal label {} outside 1..={}",
                    l,
                    NUM_CLASSES
                )))
            }
        })
        .collect()
}

/// Pixel-wise loss of the normal predictor: per-pixel softmax cross-entropy,
/// summed over samples and averaged over the `K x K` pixels.
///
/// `logits` is `[M, 40, K, K]`; `labels` holds one 1-based class per pixel in
/// `[M, K, K]` order.
pub fn fcn_loss<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[u8]) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    if shape.len() != 4 || shape[1] != NUM_CLASSES {
        return Err(Error::config(
            "fcn_loss",
            alloc::format!("logits must be [M,{},K,K], got {:?}", NUM_CLASSES, shape),
        ));
    }
    let targets = zero_based(labels)?;
    let pixels = (shape[2] * shape[3]) as f64;
    g.softmax_cross_entropy(logits, &targets, T::lit(1.0 / pixels))
}

/// Style generator objective: conditional adversarial term plus the
/// pixel-wise term, unweighted. `None` drops the pixel-wise term.
pub fn style_g_multitask_loss<T: Real>(g: &mut Graph<T>, cond_g_term: Var, fcn_term: Option<Var>) -> Result<Var> {
    match fcn_term {
        Some(f) => g.add(cond_g_term, f),
        None => Ok(cond_g_term),
    }
}

/// Structure generator objective in the joint phase:
/// `structure_g_term + lambda * style_chain_term`.
pub fn joint_structure_g_loss<T: Real>(
    g: &mut Graph<T>,
    structure_g_term: Var,
    style_chain_term: Var,
    lambda: f64,
) -> Result<Var> {
    let weighted = g.scale(style_chain_term, T::lit(lambda));
    g.add(structure_g_term, weighted)
}
