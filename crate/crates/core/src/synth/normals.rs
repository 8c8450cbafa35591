//! Per-pixel normals from a depth map by least-squares plane fitting.

use alloc::vec::Vec;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::scene::{DepthMap, Intrinsics, NormalMap};
use crate::error::{Error, Result};

/// Used where the neighborhood does not span a plane.
pub const FALLBACK_NORMAL: [f64; 3] = [0.0, 0.0, 1.0];

/// Window 5 at 128 pixels and above, 3 below.
pub fn window_for_size(size: usize) -> usize {
    if size >= 128 {
        5
    } else {
        3
    }
}

/// Camera-frame point seen at pixel `(u, v)` with the given depth.
pub fn unproject(intr: &Intrinsics, u: usize, v: usize, depth: f64) -> [f64; 3] {
    let r = intr.ray(u, v);
    [r[0] * depth, r[1] * depth, r[2] * depth]
}

/// Fit a plane over a `window x window` neighborhood of every pixel (clipped
/// at the border) and return its unit normal, oriented toward the camera.
pub fn normals_from_depth(depth: &DepthMap, window: usize) -> Result<NormalMap> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::config(
            "normals_from_depth",
            alloc::format!("window must be odd and at least 3, got {}", window),
        ));
    }
    let (w, h) = (depth.width, depth.height);
    if depth.depth.len() != w * h {
        return Err(Error::Data(alloc::format!(
            "depth map holds {} values for {}x{}",
            depth.depth.len(),
            w,
            h
        )));
    }
    if let Some(bad) = depth.depth.iter().find(|d| !d.is_finite() || **d <= 0.0) {
        return Err(Error::Data(alloc::format!("depth map contains {}", bad)));
    }
    let points: Vec<Vector3<f64>> = (0..w * h)
        .map(|i| {
            let p = unproject(&depth.intrinsics, i % w, i / w, depth.depth[i]);
            Vector3::new(p[0], p[1], p[2])
        })
        .collect();
    let r = window / 2;
    let mut normals = Vec::with_capacity(w * h);
    for v in 0..h {
        for u in 0..w {
            let (u0, u1) = (u.saturating_sub(r), (u + r).min(w - 1));
            let (v0, v1) = (v.saturating_sub(r), (v + r).min(h - 1));
            let mut centroid = Vector3::zeros();
            let mut count = 0.0;
            for y in v0..=v1 {
                for x in u0..=u1 {
                    centroid += points[y * w + x];
                    count += 1.0;
                }
            }
            centroid /= count;
            let mut cov = Matrix3::zeros();
            for y in v0..=v1 {
                for x in u0..=u1 {
                    let d = points[y * w + x] - centroid;
                    cov += d * d.transpose();
                }
            }
            normals.push(fit_normal(cov, &points[v * w + u]));
        }
    }
    Ok(NormalMap {
        width: w,
        height: h,
        normals,
    })
}

fn fit_normal(cov: Matrix3<f64>, point: &Vector3<f64>) -> [f64; 3] {
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]];
    let middle = eig.eigenvalues[order[1]];
    // A single repeated point or a line does not define a plane.
    if largest <= 1e-18 || middle <= 1e-10 * largest {
        return FALLBACK_NORMAL;
    }
    let mut n: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    let norm = n.norm();
    if !(norm > 0.0) {
        return FALLBACK_NORMAL;
    }
    n /= norm;
    // The camera sits at the origin, so the visible side faces -point.
    if n.dot(point) > 0.0 {
        n = -n;
    }
    [n.x, n.y, n.z]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{angle_deg, generate_scene};

    fn plane_depth(size: usize, a: f64, c: f64) -> DepthMap {
        // Camera-frame plane z = a x + c; along a ray (rx, ry, -1) scaled by
        // t, -t = a t rx + c.
        let intrinsics = Intrinsics::for_size(size, size);
        let depth = (0..size * size)
            .map(|i| {
                let r = intrinsics.ray(i % size, i / size);
                -c / (1.0 + a * r[0])
            })
            .collect();
        DepthMap {
            width: size,
            height: size,
            depth,
            intrinsics,
        }
    }

    #[test]
    fn window_rule() {
        assert_eq!(window_for_size(128), 5);
        assert_eq!(window_for_size(64), 3);
        assert_eq!(window_for_size(32), 3);
    }

    #[test]
    fn fronto_parallel_plane() {
        for &window in &[3, 5] {
            let map = normals_from_depth(&plane_depth(24, 0.0, -2.0), window).unwrap();
            for n in &map.normals {
                for k in 0..3 {
                    assert!((n[k] - FALLBACK_NORMAL[k]).abs() <= 1e-3, "{:?}", n);
                }
            }
        }
    }

    #[test]
    fn slanted_planes_match_closed_form() {
        for &a in &[-1.5, -0.4, 0.3, 0.8, 1.5] {
            let map = normals_from_depth(&plane_depth(32, a, -3.0), 3).unwrap();
            let norm = (1.0 + a * a).sqrt();
            let expect = [-a / norm, 0.0, 1.0 / norm];
            for n in &map.normals {
                assert!(angle_deg(*n, expect) <= 0.5, "a={} n={:?}", a, n);
            }
        }
    }

    #[test]
    fn rejects_bad_windows() {
        let d = plane_depth(8, 0.0, -1.0);
        assert!(normals_from_depth(&d, 4).is_err());
        assert!(normals_from_depth(&d, 1).is_err());
    }

    #[test]
    fn single_pixel_falls_back() {
        let d = plane_depth(1, 0.0, -1.0);
        assert_eq!(normals_from_depth(&d, 3).unwrap().normals, [FALLBACK_NORMAL]);
    }

    #[test]
    fn scene_face_interiors_match_analytic_normals() {
        for seed in 0..30 {
            let s = generate_scene(seed, 64, 64);
            let fitted = normals_from_depth(&s.depth, 3).unwrap();
            let (w, h) = (s.width(), s.height());
            for v in 1..h - 1 {
                for u in 1..w - 1 {
                    let face = s.surfaces[v * w + u];
                    let interior = (v - 1..=v + 1).all(|y| (u - 1..=u + 1).all(|x| s.surfaces[y * w + x] == face));
                    if interior {
                        let err = angle_deg(fitted.at(u, v), s.normals.at(u, v));
                        assert!(err <= 2.0, "seed {} ({}, {}) {:?}: {}", seed, u, v, face, err);
                    }
                }
            }
        }
    }
}
