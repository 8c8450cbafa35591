//! Sample directories (`depth.pgm`, `rgb.ppm`, `meta.txt`) and the codebook
//! text file.

use std::fs;
use std::path::{Path, PathBuf};

use s2gan_core::synth::{normals_from_depth, window_for_size, DepthMap, Intrinsics, NormalCodebook, NormalMap, SceneSample};

use super::image::{from_byte, to_byte};
use super::pnm::{read_pgm16, read_ppm, write_pgm16, write_ppm, Gray16, Rgb8};
use super::write_atomic;
use crate::error::{Error, Result};

pub const DEPTH_FILE: &str = "depth.pgm";
pub const RGB_FILE: &str = "rgb.ppm";
pub const META_FILE: &str = "meta.txt";

/// A depth + color pair read from disk, with normals fit to the depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdSample {
    pub dir: PathBuf,
    pub depth: DepthMap,
    /// Row-major, in [-1, 1].
    pub rgb: Vec<[f64; 3]>,
    pub normals: NormalMap,
}

/// Depth in millimetres (16 bit), color in 8 bit, intrinsics on one line.
pub fn save_scene(dir: &Path, scene: &SceneSample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let d = &scene.depth;
    let depth = Gray16 {
        width: d.width,
        height: d.height,
        data: d.depth.iter().map(|&z| (z * 1000.0).round().clamp(0.0, 65535.0) as u16).collect(),
    };
    write_pgm16(&dir.join(DEPTH_FILE), &depth)?;
    let mut rgb = Rgb8::new(d.width, d.height);
    for (i, p) in scene.rgb.iter().enumerate() {
        rgb.set(i % d.width, i / d.width, p.map(to_byte));
    }
    write_ppm(&dir.join(RGB_FILE), &rgb)?;
    let k = d.intrinsics;
    write_atomic(&dir.join(META_FILE), format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy).as_bytes())
}

fn read_meta(path: &Path) -> Result<Intrinsics> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(path, format!("bad number: {}", e)))?;
    match v[..] {
        [fx, fy, cx, cy] if fx > 0.0 && fy > 0.0 => Ok(Intrinsics { fx, fy, cx, cy }),
        _ => Err(Error::format(path, "expected four numbers: fx fy cx cy")),
    }
}

/// Read one sample directory and fit normals to its depth.
pub fn load_rgbd(dir: &Path) -> Result<RgbdSample> {
    let intrinsics = read_meta(&dir.join(META_FILE))?;
    let depth_path = dir.join(DEPTH_FILE);
    let depth = read_pgm16(&depth_path)?;
    let rgb_path = dir.join(RGB_FILE);
    let rgb = read_ppm(&rgb_path)?;
    if (rgb.width, rgb.height) != (depth.width, depth.height) {
        return Err(Error::format(
            &rgb_path,
            format!(
                "{}x{} image does not match {}x{} depth",
                rgb.width, rgb.height, depth.width, depth.height
            ),
        ));
    }
    if let Some(i) = depth.data.iter().position(|&mm| mm == 0) {
        return Err(Error::format(
            &depth_path,
            format!("missing depth at pixel ({}, {})", i % depth.width, i / depth.width),
        ));
    }
    let depth = DepthMap {
        width: depth.width,
        height: depth.height,
        depth: depth.data.iter().map(|&mm| mm as f64 / 1000.0).collect(),
        intrinsics,
    };
    let normals = normals_from_depth(&depth, window_for_size(depth.width.min(depth.height)))?;
    let rgb = (0..rgb.width * rgb.height)
        .map(|i| rgb.pixel(i % rgb.width, i / rgb.width).map(from_byte))
        .collect();
    Ok(RgbdSample {
        dir: dir.to_path_buf(),
        depth,
        rgb,
        normals,
    })
}

/// Every subdirectory of `root` in name order; a bad sample yields an error
/// naming its file and the stream continues.
pub fn load_external_rgbd(root: &Path) -> Result<impl Iterator<Item = Result<RgbdSample>>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    Ok(dirs.into_iter().map(|d| load_rgbd(&d)))
}

/// One centroid per line, three space-separated decimals.
pub fn write_codebook(path: &Path, codebook: &NormalCodebook) -> Result<()> {
    let text: String = codebook
        .centroids
        .iter()
        .map(|c| format!("{} {} {}\n", c[0], c[1], c[2]))
        .collect();
    write_atomic(path, text.as_bytes())
}

pub fn read_codebook(path: &Path) -> Result<NormalCodebook> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut centroids = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("line {}: {}", i + 1, e)))?;
        match v[..] {
            [x, y, z] => centroids.push([x, y, z]),
            _ => return Err(Error::format(path, format!("line {}: expected three numbers", i + 1))),
        }
    }
    // Unit vectors written by us come back bit-exact; others are normalized.
    NormalCodebook::from_unit(centroids.clone())
        .or_else(|_| NormalCodebook::new(centroids))
        .map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use s2gan_core::synth::{generate_scene, generate_scene_with, SceneOptions};

    #[test]
    fn scene_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let scene = generate_scene(11, 32, 32);
        save_scene(dir.path(), &scene).unwrap();
        let back = load_rgbd(dir.path()).unwrap();
        assert_eq!(back.depth.intrinsics, scene.depth.intrinsics);
        for (a, b) in back.depth.depth.iter().zip(&scene.depth.depth) {
            assert!((a - b).abs() <= 0.0005 + 1e-12);
        }
        for (a, b) in back.rgb.iter().zip(&scene.rgb) {
            for c in 0..3 {
                assert!((a[c] - b[c].clamp(-1.0, 1.0)).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn flat_plane_gives_camera_facing_normals() {
        let dir = tempfile::tempdir().unwrap();
        let mut scene = generate_scene_with(3, 24, 24, SceneOptions { boxes: Some(0) });
        scene.depth.depth.iter_mut().for_each(|z| *z = 2.5);
        save_scene(dir.path(), &scene).unwrap();
        let back = load_rgbd(dir.path()).unwrap();
        for n in &back.normals.normals {
            assert!((n[2] - 1.0).abs() < 1e-9 && n[0].abs() < 1e-9 && n[1].abs() < 1e-9);
        }
    }

    #[test]
    fn missing_depth_names_the_file() {
        let root = tempfile::tempdir().unwrap();
        save_scene(&root.path().join("a"), &generate_scene(1, 16, 16)).unwrap();
        save_scene(&root.path().join("b"), &generate_scene(2, 16, 16)).unwrap();
        fs::remove_file(root.path().join("a").join(DEPTH_FILE)).unwrap();
        let results: Vec<_> = load_external_rgbd(root.path()).unwrap().collect();
        assert_eq!(results.len(), 2);
        let msg = results[0].as_ref().unwrap_err().to_string();
        assert!(msg.contains("depth.pgm"), "{}", msg);
        assert!(results[1].is_ok());
    }

    #[test]
    fn codebook_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("codebook.txt");
        let cb = NormalCodebook::new((0..40).map(|i| [i as f64 - 20.0, 1.0, 3.0]).collect()).unwrap();
        write_codebook(&path, &cb).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap().lines().count(), 40);
        assert_eq!(read_codebook(&path).unwrap(), cb);
        fs::write(&path, "1 0\n").unwrap();
        assert!(read_codebook(&path).unwrap_err().to_string().contains("line 1"));
    }
}
