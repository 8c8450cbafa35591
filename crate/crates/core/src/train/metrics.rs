//! Evaluation helpers shared by the trainer, the CLI and the tests.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::networks::{Mode, Network};
use crate::real::Real;
use crate::synth::{angle_deg, NormalCodebook};
use crate::tensor::Tensor;

/// Per-pixel vectors of a `[N, 3, H, W]` tensor, sample-major then
/// row-major.
pub fn normals_from_tensor<T: Real>(t: &Tensor<T>) -> Result<Vec<[f64; 3]>> {
    let s = t.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::Data(alloc::format!("expected [N, 3, H, W], got {:?}", s)));
    }
    let plane = s[2] * s[3];
    let d = t.data();
    let mut out = Vec::with_capacity(s[0] * plane);
    for n in 0..s[0] {
        let base = n * 3 * plane;
        for p in 0..plane {
            out.push([
                Real::to_f64(d[base + p]),
                Real::to_f64(d[base + plane + p]),
                Real::to_f64(d[base + 2 * plane + p]),
            ]);
        }
    }
    Ok(out)
}

fn norm(n: &[f64; 3]) -> f64 {
    num_traits::Float::sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
}

/// Mean of `| |n| - 1 |` over every pixel.
pub fn mean_norm_deviation<T: Real>(t: &Tensor<T>) -> Result<f64> {
    let v = normals_from_tensor(t)?;
    let total: f64 = v
        .iter()
        .map(|n| (norm(n) - 1.0).abs())
        .sum();
    Ok(total / v.len().max(1) as f64)
}

/// Mean angle in degrees between corresponding vectors; zero vectors count
/// as 90 degrees.
pub fn mean_angular_error(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let unit = |n: &[f64; 3]| {
        let l = norm(n);
        (l > 0.0).then(|| [n[0] / l, n[1] / l, n[2] / l])
    };
    let total: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| match (unit(x), unit(y)) {
            (Some(x), Some(y)) => angle_deg(x, y),
            _ => 90.0,
        })
        .sum();
    total / a.len().min(b.len()).max(1) as f64
}

/// Fraction of scores on the right side of 0.5: real above, generated at
/// or below.
pub fn discriminator_accuracy<T: Real>(real: &Tensor<T>, fake: &Tensor<T>) -> f64 {
    let right = real.data().iter().filter(|&&s| s.to_f64() > 0.5).count()
        + fake.data().iter().filter(|&&s| s.to_f64() <= 0.5).count();
    right as f64 / (real.numel() + fake.numel()).max(1) as f64
}

/// Argmax class of `[N, C, H, W]` logits as 1-based labels; ties go to the
/// lower class.
pub fn argmax_labels<T: Real>(logits: &Tensor<T>) -> Vec<u8> {
    let s = logits.shape();
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let d = logits.data();
    let mut out = Vec::with_capacity(n * plane);
    for i in 0..n {
        for p in 0..plane {
            let mut best = 0;
            for k in 1..c {
                if d[(i * c + k) * plane + p] > d[(i * c + best) * plane + p] {
                    best = k;
                }
            }
            out.push(best as u8 + 1);
        }
    }
    out
}

/// FCN predictions for `images [N, 3, S, S]` as 1-based labels.
pub fn fcn_label_map<T: Real>(fcn: &mut Network<T>, images: &Tensor<T>) -> Result<Vec<u8>> {
    let logits = fcn.run(core::slice::from_ref(images), Mode::Eval)?;
    Ok(argmax_labels(&logits))
}

/// Fraction of pixels whose predicted label equals `labels`.
pub fn fcn_pixel_accuracy<T: Real>(fcn: &mut Network<T>, images: &Tensor<T>, labels: &[u8]) -> Result<f64> {
    let pred = fcn_label_map(fcn, images)?;
    if pred.len() != labels.len() {
        return Err(Error::Data(alloc::format!(
            "{} predictions for {} labels",
            pred.len(),
            labels.len()
        )));
    }
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}

/// Mean angle between the FCN's dequantized prediction on `images` and
/// `normals`.
pub fn fcn_normal_error<T: Real>(
    fcn: &mut Network<T>,
    codebook: &NormalCodebook,
    images: &Tensor<T>,
    normals: &Tensor<T>,
) -> Result<f64> {
    let pred = fcn_label_map(fcn, images)?;
    let pred: Vec<[f64; 3]> = pred.iter().map(|&l| codebook.centroid(l)).collect::<Result<_>>()?;
    Ok(mean_angular_error(&pred, &normals_from_tensor(normals)?))
}
