//! k-means codebook over unit normals and the label maps built on it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::scene::NormalMap;
use crate::error::{Error, Result};
use crate::rng;

pub const CODEBOOK_ITERATIONS: usize = 100;
/// Stop once no centroid moves further than this.
pub const CODEBOOK_TOLERANCE: f64 = 1e-5;

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalized(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = num_traits::Float::sqrt(dot(&v, &v));
    (n > 0.0 && n.is_finite()).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

/// Unit centroids; label `l` (1-based) names `centroids[l - 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalCodebook {
    pub centroids: Vec<[f64; 3]>,
    /// Set when two centroids coincide (fewer distinct normals than classes).
    pub warning: Option<String>,
}

impl NormalCodebook {
    /// Normalizes every centroid; at most 255 so labels fit in `u8`.
    pub fn new(centroids: Vec<[f64; 3]>) -> Result<Self> {
        if centroids.is_empty() || centroids.len() > 255 {
            return Err(Error::config(
                "codebook",
                format!("needs 1..=255 centroids, got {}", centroids.len()),
            ));
        }
        let centroids = centroids
            .into_iter()
            .enumerate()
            .map(|(i, c)| normalized(c).ok_or_else(|| Error::Data(format!("centroid {} is zero or not finite", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        let warning = duplicate_warning(&centroids);
        Ok(NormalCodebook { centroids, warning })
    }

    /// Keeps centroids bit-exact; each must already have unit length (to
    /// 1e-9).
    pub fn from_unit(centroids: Vec<[f64; 3]>) -> Result<Self> {
        if centroids.is_empty() || centroids.len() > 255 {
            return Err(Error::config(
                "codebook",
                format!("needs 1..=255 centroids, got {}", centroids.len()),
            ));
        }
        for (i, c) in centroids.iter().enumerate() {
            let n = num_traits::Float::sqrt(dot(c, c));
            if !((n - 1.0).abs() <= 1e-9) {
                return Err(Error::Data(format!("centroid {} has length {}", i + 1, n)));
            }
        }
        let warning = duplicate_warning(&centroids);
        Ok(NormalCodebook { centroids, warning })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    /// Label of the centroid with the largest dot product; ties go to the
    /// lowest label.
    pub fn quantize_one(&self, n: [f64; 3]) -> u8 {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = dot(c, &n);
            if d > best_dot {
                best = i;
                best_dot = d;
            }
        }
        best as u8 + 1
    }

    pub fn quantize(&self, map: &NormalMap) -> Vec<u8> {
        self.quantize_all(&map.normals)
    }

    pub fn quantize_all(&self, normals: &[[f64; 3]]) -> Vec<u8> {
        normals.iter().map(|&n| self.quantize_one(n)).collect()
    }

    pub fn centroid(&self, label: u8) -> Result<[f64; 3]> {
        if label == 0 || label as usize > self.len() {
            return Err(Error::Data(format!("label {} outside 1..={}", label, self.len())));
        }
        Ok(self.centroids[label as usize - 1])
    }

    pub fn dequantize(&self, labels: &[u8], width: usize, height: usize) -> Result<NormalMap> {
        if labels.len() != width * height {
            return Err(Error::Data(format!(
                "{} labels for a {}x{} map",
                labels.len(),
                width,
                height
            )));
        }
        let normals = labels.iter().map(|&l| self.centroid(l)).collect::<Result<Vec<_>>>()?;
        Ok(NormalMap {
            width,
            height,
            normals,
        })
    }

    /// Mean and max angle in degrees between each normal and its centroid.
    pub fn angular_error(&self, normals: &[[f64; 3]]) -> (f64, f64) {
        let mut sum = 0.0;
        let mut max: f64 = 0.0;
        for &n in normals {
            let c = self.centroids[self.quantize_one(n) as usize - 1];
            let e = match normalized(n) {
                Some(u) => super::angle_deg(u, c),
                None => 0.0,
            };
            sum += e;
            max = max.max(e);
        }
        (sum / normals.len().max(1) as f64, max)
    }
}

fn duplicate_warning(centroids: &[[f64; 3]]) -> Option<String> {
    let mut dupes = 0;
    for i in 0..centroids.len() {
        if (0..i).any(|j| dot(&centroids[i], &centroids[j]) >= 1.0 - 1e-12) {
            dupes += 1;
        }
    }
    (dupes > 0).then(|| {
        format!(
            "{} of {} centroids duplicate another: fewer distinct normals than classes",
            dupes,
            centroids.len()
        )
    })
}

/// Spherical k-means with k-means++ seeding.
///
/// Assignment maximizes the dot product and centroids are renormalized after
/// every update. Empty clusters keep their previous centroid.
pub fn kmeans_codebook(normals: &[[f64; 3]], k: usize, seed: u64) -> Result<NormalCodebook> {
    if k == 0 || k > 255 {
        return Err(Error::config("kmeans_codebook", format!("k must be 1..=255, got {}", k)));
    }
    let points = normals
        .iter()
        .map(|&n| normalized(n).ok_or_else(|| Error::Data(format!("normal {:?} is zero or not finite", n))))
        .collect::<Result<Vec<_>>>()?;
    if points.len() < k {
        return Err(Error::config(
            "kmeans_codebook",
            format!("{} normals for {} clusters", points.len(), k),
        ));
    }
    let mut r = rng::stream(seed, rng::tag("synth/codebook"), 0);
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[r.gen_range(0..points.len())]);
    // Squared chord distance to the nearest chosen centroid: 2 (1 - cos).
    let mut dist: Vec<f64> = points.iter().map(|p| 2.0 * (1.0 - dot(p, &centroids[0])).max(0.0)).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = r.gen_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, &d) in dist.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            points[pick]
        } else {
            // Every point already sits on a centroid.
            points[r.gen_range(0..points.len())]
        };
        for (d, p) in dist.iter_mut().zip(&points) {
            *d = d.min(2.0 * (1.0 - dot(p, &next)).max(0.0));
        }
        centroids.push(next);
    }

    let mut codebook = NormalCodebook {
        centroids,
        warning: None,
    };
    for _ in 0..CODEBOOK_ITERATIONS {
        let mut sums = vec![[0.0f64; 3]; k];
        for p in &points {
            let s = &mut sums[codebook.quantize_one(*p) as usize - 1];
            s[0] += p[0];
            s[1] += p[1];
            s[2] += p[2];
        }
        let mut moved: f64 = 0.0;
        for (c, s) in codebook.centroids.iter_mut().zip(sums) {
            if let Some(n) = normalized(s) {
                let d = [n[0] - c[0], n[1] - c[1], n[2] - c[2]];
                moved = moved.max(num_traits::Float::sqrt(dot(&d, &d)));
                *c = n;
            }
        }
        if moved < CODEBOOK_TOLERANCE {
            break;
        }
    }
    codebook.warning = duplicate_warning(&codebook.centroids);
    Ok(codebook)
}
