//! `sample`, `walk` and `render`: generator inference and its files.
//!
//! Every sample runs through the generators on its own with batch-norm
//! running statistics, so an output depends only on its noise vectors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use log::warn;
use rand::seq::index;
use s2gan_core::networks::{Mode, NetworkKind, Scale};
use s2gan_core::rng;
use s2gan_core::synth::{generate_scene, NormalMap};
use s2gan_core::train::{Phase, TrainState};
use s2gan_core::{Graph, Tensor, NOISE_DIM};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::checkpoint::{checkpoint_id, load_checkpoint};
use crate::io::image::{decode_normal_image, encode_normal_image, normals_from_tensor, rgb_from_tensor, tensor_from_normals};
use crate::io::pnm::{read_ppm, write_ppm, Rgb8};
use crate::io::rgbd::{load_rgbd, save_scene};
use crate::io::write_atomic;

/// Largest `| |n| - 1 |` accepted from a decoded normal image without a
/// warning; 8-bit quantization alone stays well below it.
pub const UNIT_TOLERANCE: f64 = 0.02;

pub struct Models {
    pub state: TrainState<f32>,
    pub checkpoint: String,
}

impl Models {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Models {
            state: load_checkpoint(path)?,
            checkpoint: checkpoint_id(path)?,
        })
    }

    pub fn scale(&self) -> Scale {
        self.state.scale
    }

    fn require(&self, command: &'static str, phases: &[Phase]) -> Result<()> {
        match phases.iter().find(|&&p| !self.state.has_completed(p)) {
            Some(p) => Err(s2gan_core::Error::Prerequisite {
                phase: command,
                required: p.name(),
            }
            .into()),
            None => Ok(()),
        }
    }

    /// Both generators: finished joint phase, or both separate phases.
    pub fn require_pair(&self, command: &'static str) -> Result<()> {
        if self.state.has_completed(Phase::Joint) {
            return Ok(());
        }
        self.require(command, &[Phase::Structure, Phase::StyleFrozenFcn])
    }

    pub fn require_style(&self, command: &'static str) -> Result<()> {
        self.require(command, &[Phase::StyleFrozenFcn])
    }

    /// `[1, 3, s, s]` normals from `[1, 100]` noise.
    pub fn structure(&mut self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let net = self.state.net_mut(NetworkKind::StructureGenerator);
        Ok(net.run(std::slice::from_ref(z), Mode::Eval)?)
    }

    /// `[1, 3, S, S]` image from `[1, 3, S, S]` normals.
    pub fn style(&mut self, normals: &Tensor<f32>, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let net = self.state.net_mut(NetworkKind::StyleGenerator);
        Ok(net.run(&[normals.clone(), z.clone()], Mode::Eval)?)
    }

    /// Bilinear resize to the style resolution, as in joint training.
    pub fn upsample(&self, normals: &Tensor<f32>) -> Result<Tensor<f32>> {
        let size = self.scale().style_size();
        let mut g = Graph::new();
        let x = g.input(normals.clone());
        let y = g.resize_bilinear(x, size, size)?;
        Ok(g.value(y).clone())
    }
}

/// `[1, 100]` uniform(-1, 1) noise for output `index`.
pub fn noise(seed: u64, which: &str, index: u64) -> Tensor<f32> {
    let mut r = rng::stream(seed, rng::tag("cli/noise") ^ rng::tag(which), index);
    rng::uniform_noise(&mut r, 1, NOISE_DIM)
}

pub fn sha256_of(t: &Tensor<f32>) -> String {
    let mut h = Sha256::new();
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn vector(t: &Tensor<f32>) -> String {
    t.data().iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

/// `key = value` sidecar.
#[derive(Default)]
pub struct Meta(Vec<(String, String)>);

impl Meta {
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    pub fn noise(&mut self, key: &str, z: &Tensor<f32>) -> &mut Self {
        self.set(&format!("{}_sha256", key), sha256_of(z));
        self.set(key, vector(z))
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.0 {
            let _ = writeln!(s, "{} = {}", k, v);
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text().as_bytes())
    }
}

/// Read a sidecar back as pairs.
pub fn read_meta(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

struct Pair {
    normals: Tensor<f32>,
    image: Tensor<f32>,
}

fn generate(models: &mut Models, z_hat: &Tensor<f32>, z_tilde: &Tensor<f32>) -> Result<Pair> {
    let normals = models.structure(z_hat)?;
    let up = models.upsample(&normals)?;
    let image = models.style(&up, z_tilde)?;
    Ok(Pair { normals, image })
}

fn write_pair(dir: &Path, pair: &Pair, meta: &Meta) -> Result<()> {
    write_ppm(&dir.join("normals.ppm"), &encode_normal_image(&normals_from_tensor(&pair.normals, 0)))?;
    write_ppm(&dir.join("image.ppm"), &rgb_from_tensor(&pair.image, 0))?;
    meta.write(&dir.join("meta.txt"))
}

fn base_meta(models: &Models, kind: &str, seed: u64) -> Meta {
    let mut m = Meta::default();
    m.set("kind", kind)
        .set("checkpoint", &models.checkpoint)
        .set("scale", models.scale().label())
        .set("seed", seed);
    m
}

/// `count` independent pairs under `<out>/samples/NNNN`.
pub fn sample(models: &mut Models, seed: u64, count: usize, out: &Path) -> Result<Vec<PathBuf>> {
    models.require_pair("sample")?;
    let mut dirs = Vec::new();
    for i in 0..count as u64 {
        let z_hat = noise(seed, "structure", i);
        let z_tilde = noise(seed, "style", i);
        let pair = generate(models, &z_hat, &z_tilde)?;
        let mut meta = base_meta(models, "sample", seed);
        meta.set("index", i).noise("z_hat", &z_hat).noise("z_tilde", &z_tilde);
        let dir = out.join("samples").join(format!("{:04}", i));
        write_pair(&dir, &pair, &meta)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkMode {
    /// Move the structure noise, hold the style noise.
    Structure,
    /// Move the style noise, hold the structure noise.
    Style,
}

impl WalkMode {
    pub fn name(self) -> &'static str {
        match self {
            WalkMode::Structure => "structure",
            WalkMode::Style => "style",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkOptions {
    pub mode: WalkMode,
    /// Sample index whose noise is frame 0.
    pub index: u64,
    pub dims: usize,
    pub step: f32,
    pub frames: usize,
}

impl Default for WalkOptions {
    fn default() -> Self {
        WalkOptions {
            mode: WalkMode::Structure,
            index: 0,
            dims: 10,
            step: 0.1,
            frames: 7,
        }
    }
}

/// The coordinates a walk moves, ascending.
pub fn walk_dims(seed: u64, index: u64, dims: usize) -> Vec<usize> {
    let mut r = rng::stream(seed, rng::tag("cli/walk"), index);
    let mut d = index::sample(&mut r, NOISE_DIM, dims.min(NOISE_DIM)).into_vec();
    d.sort_unstable();
    d
}

/// Frames under `<out>/walk-<mode>/frame-KK` plus `contact.ppm`: normals on
/// the top row, images below. Coordinates are clamped at 1.
pub fn walk(models: &mut Models, seed: u64, opts: WalkOptions, out: &Path) -> Result<PathBuf> {
    models.require_pair("walk")?;
    let dims = walk_dims(seed, opts.index, opts.dims);
    let z_hat0 = noise(seed, "structure", opts.index);
    let z_tilde0 = noise(seed, "style", opts.index);
    let root = out.join(format!("walk-{}", opts.mode.name()));
    let size = models.scale().style_size();
    let mut sheet = Rgb8::new(size * opts.frames.max(1), 2 * size);
    for k in 0..opts.frames {
        let (mut z_hat, mut z_tilde) = (z_hat0.clone(), z_tilde0.clone());
        let moving = match opts.mode {
            WalkMode::Structure => &mut z_hat,
            WalkMode::Style => &mut z_tilde,
        };
        let mut clamped = Vec::new();
        for &d in &dims {
            let v = &mut moving.data_mut()[d];
            let target = *v + k as f32 * opts.step;
            if target > 1.0 {
                clamped.push(d.to_string());
            }
            *v = target.min(1.0);
        }
        let pair = generate(models, &z_hat, &z_tilde)?;
        let mut meta = base_meta(models, "walk", seed);
        meta.set("mode", opts.mode.name())
            .set("index", opts.index)
            .set("frame", k)
            .set("step", opts.step)
            .set("dims", dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(" "))
            .set("clamped", clamped.join(" "))
            .noise("z_hat", &z_hat)
            .noise("z_tilde", &z_tilde);
        write_pair(&root.join(format!("frame-{:02}", k)), &pair, &meta)?;
        sheet.blit(&encode_normal_image(&normals_from_tensor(&pair.normals, 0)), k * size, 0);
        sheet.blit(&rgb_from_tensor(&pair.image, 0), k * size, size);
    }
    write_ppm(&root.join("contact.ppm"), &sheet)?;
    Ok(root)
}

/// What `render` runs the style generator on.
#[derive(Debug, Clone, PartialEq)]
pub enum RenderInput {
    /// A normal image in the X-blue, Y-green, Z-red encoding.
    NormalsFile(PathBuf),
    /// Ground-truth normals of a synthetic scene.
    Scene(u64),
    /// A sample directory; normals are fit to its depth.
    Rgbd(PathBuf),
}

fn resize_normals(map: &NormalMap, size: usize) -> Result<NormalMap> {
    let mut g = Graph::new();
    let x = g.input(tensor_from_normals::<f64>(map));
    let y = g.resize_bilinear(x, size, size)?;
    let t = g.value(y);
    let plane = size * size;
    Ok(NormalMap {
        width: size,
        height: size,
        normals: (0..plane)
            .map(|p| {
                let n = [0, 1, 2].map(|c| t.data()[c * plane + p]);
                let l = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt().max(1e-12);
                n.map(|v| v / l)
            })
            .collect(),
    })
}

/// Check size and unit length of a decoded normal image; fix with a warning,
/// or refuse under `strict`.
fn conform(img: &Rgb8, size: usize, strict: bool, origin: &str) -> Result<NormalMap> {
    let (map, worst) = decode_normal_image(img);
    if worst > UNIT_TOLERANCE {
        let msg = format!("{}: normals deviate from unit length by up to {:.3}", origin, worst);
        if strict {
            return Err(Error::Check(msg));
        }
        warn!("{}; normalized", msg);
    }
    if (map.width, map.height) != (size, size) {
        let msg = format!("{}: {}x{} normals, expected {}x{}", origin, map.width, map.height, size, size);
        if strict {
            return Err(Error::Check(msg));
        }
        warn!("{}; resized", msg);
        return resize_normals(&map, size);
    }
    Ok(map)
}

/// Render `count` images of one normal map under `<out>/render`. Scene and
/// RGBD inputs go through the same 8-bit normal image a file input would,
/// so rendering an exported `normals.ppm` reproduces them exactly.
pub fn render(models: &mut Models, input: &RenderInput, seed: u64, count: usize, strict: bool, out: &Path) -> Result<Vec<PathBuf>> {
    models.require_style("render")?;
    let size = models.scale().style_size();
    let root = out.join("render");
    let (img, origin) = match input {
        RenderInput::NormalsFile(p) => (read_ppm(p)?, p.display().to_string()),
        RenderInput::Scene(s) => {
            let scene = generate_scene(*s, size, size);
            save_scene(&root.join(format!("scene-{}", s)), &scene)?;
            (encode_normal_image(&scene.normals), format!("scene {}", s))
        }
        RenderInput::Rgbd(dir) => (encode_normal_image(&load_rgbd(dir)?.normals), dir.display().to_string()),
    };
    let map = conform(&img, size, strict, &origin)?;
    let normals = tensor_from_normals::<f32>(&map);
    let normals_img = encode_normal_image(&map);
    write_ppm(&root.join("normals.ppm"), &normals_img)?;
    let mut dirs = Vec::new();
    for j in 0..count as u64 {
        let z_tilde = noise(seed, "render", j);
        let image = models.style(&normals, &z_tilde)?;
        let mut meta = base_meta(models, "render", seed);
        meta.set("input", &origin)
            .set("index", j)
            .set("normals_sha256", sha256_of(&normals))
            .noise("z_tilde", &z_tilde);
        let dir = root.join(format!("{:02}", j));
        write_ppm(&dir.join("image.ppm"), &rgb_from_tensor(&image, 0))?;
        meta.write(&dir.join("meta.txt"))?;
        dirs.push(dir);
    }
    Ok(dirs)
}
