//! Conversions between tensors, normal maps and 8-bit images.
//!
//! Normal images put X in blue, Y in green and Z in red; every channel maps
//! [-1, 1] affinely onto [0, 255] with round-half-up.

use s2gan_core::synth::NormalMap;
use s2gan_core::{Real, Tensor};

use super::pnm::Rgb8;

/// [-1, 1] to [0, 255], rounding halves up; out-of-range values clamp.
pub fn to_byte(v: f64) -> u8 {
    let x = (v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0;
    (x + 0.5).floor().min(255.0) as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 255.0 * 2.0 - 1.0
}

pub fn encode_normal(n: [f64; 3]) -> [u8; 3] {
    [to_byte(n[2]), to_byte(n[1]), to_byte(n[0])]
}

/// Raw inverse of [`encode_normal`]; not renormalized.
pub fn decode_normal(p: [u8; 3]) -> [f64; 3] {
    [from_byte(p[2]), from_byte(p[1]), from_byte(p[0])]
}

fn unit(n: [f64; 3]) -> Option<[f64; 3]> {
    let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    (l > 1e-12).then(|| [n[0] / l, n[1] / l, n[2] / l])
}

/// Vectors are unit-normalized before coloring; zero vectors become the
/// camera-facing normal.
pub fn encode_normal_image(map: &NormalMap) -> Rgb8 {
    let mut img = Rgb8::new(map.width, map.height);
    for (i, &n) in map.normals.iter().enumerate() {
        let n = unit(n).unwrap_or([0.0, 0.0, 1.0]);
        img.set(i % map.width, i / map.width, encode_normal(n));
    }
    img
}

/// Decoded and unit-normalized, plus the largest `| |n| - 1 |` seen before
/// normalization.
pub fn decode_normal_image(img: &Rgb8) -> (NormalMap, f64) {
    let mut worst: f64 = 0.0;
    let normals = (0..img.width * img.height)
        .map(|i| {
            let n = decode_normal(img.pixel(i % img.width, i / img.width));
            let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            worst = worst.max((l - 1.0).abs());
            unit(n).unwrap_or([0.0, 0.0, 1.0])
        })
        .collect();
    (
        NormalMap {
            width: img.width,
            height: img.height,
            normals,
        },
        worst,
    )
}

/// Sample `index` of a `[N, 3, H, W]` tensor as an image.
pub fn rgb_from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Rgb8 {
    let s = t.shape();
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let d = &t.data()[index * 3 * plane..(index + 1) * 3 * plane];
    let mut img = Rgb8::new(w, h);
    for p in 0..plane {
        let px = [0, 1, 2].map(|c| to_byte(Real::to_f64(d[c * plane + p])));
        img.set(p % w, p / w, px);
    }
    img
}

/// Sample `index` of a `[N, 3, H, W]` tensor as a normal map (not
/// normalized).
pub fn normals_from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> NormalMap {
    let s = t.shape();
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let d = &t.data()[index * 3 * plane..(index + 1) * 3 * plane];
    NormalMap {
        width: w,
        height: h,
        normals: (0..plane)
            .map(|p| [0, 1, 2].map(|c| Real::to_f64(d[c * plane + p])))
            .collect(),
    }
}

/// `[1, 3, H, W]` tensor of a normal map.
pub fn tensor_from_normals<T: Real>(map: &NormalMap) -> Tensor<T> {
    let plane = map.width * map.height;
    Tensor::from_fn([1, 3, map.height, map.width], |i| {
        T::lit(map.normals[i % plane][i / plane])
    })
}
