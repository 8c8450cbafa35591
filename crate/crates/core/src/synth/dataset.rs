//! Deterministic shuffled batches of rendered scenes.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use super::codebook::{kmeans_codebook, NormalCodebook};
use super::normals::{normals_from_depth, window_for_size};
use super::scene::{generate_scene, NormalMap, SceneSample};
use crate::error::{Error, Result};
use crate::networks::Scale;
use crate::real::Real;
use crate::rng;
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

pub const DEFAULT_BATCH: usize = 128;
const TEST_BIT: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Scene seed for `index` of a split. Train and test occupy disjoint halves
/// of the low 32 bits.
pub fn scene_seed(seed: u64, split: Split, index: usize) -> u64 {
    debug_assert!((index as u64) < TEST_BIT);
    let bit = match split {
        Split::Train => 0,
        Split::Test => TEST_BIT,
    };
    (seed << 32) | bit | (index as u64 & (TEST_BIT - 1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetConfig {
    /// Scenes per epoch.
    pub count: usize,
    pub scale: Scale,
    pub seed: u64,
    pub split: Split,
    pub batch_size: usize,
}

impl DatasetConfig {
    pub fn new(count: usize, scale: Scale, seed: u64, split: Split) -> Self {
        DatasetConfig {
            count,
            scale,
            seed,
            split,
            batch_size: DEFAULT_BATCH,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }
}

/// One minibatch. Images and normals are channel-first and in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    /// `[M, 3, S, S]` at the style resolution.
    pub images: Tensor<T>,
    /// `[M, 3, S, S]` ground-truth normals at the style resolution.
    pub normals: Tensor<T>,
    /// `[M, 3, s, s]` the same scenes at the structure resolution.
    pub structure_normals: Tensor<T>,
    /// `M * S * S` codebook labels in 1..=40, row-major per sample.
    pub labels: Vec<u8>,
    pub seeds: Vec<u64>,
}

impl<T: Real> Batch<T> {
    /// Pack co-registered scenes. `structure` holds the structure-resolution
    /// normal map of each scene.
    pub fn from_scenes(scenes: &[SceneSample], structure: &[NormalMap], codebook: &NormalCodebook) -> Result<Self> {
        if scenes.is_empty() || scenes.len() != structure.len() {
            return Err(Error::Data(format!(
                "{} scenes and {} structure maps",
                scenes.len(),
                structure.len()
            )));
        }
        let (w, h) = (scenes[0].width(), scenes[0].height());
        let (sw, sh) = (structure[0].width, structure[0].height);
        let m = scenes.len();
        let mut images = Vec::with_capacity(m * 3 * w * h);
        let mut normals = Vec::with_capacity(m * 3 * w * h);
        let mut small = Vec::with_capacity(m * 3 * sw * sh);
        let mut labels = Vec::with_capacity(m * w * h);
        for (s, st) in scenes.iter().zip(structure) {
            if s.width() != w || s.height() != h || st.width != sw || st.height != sh {
                return Err(Error::Data(format!("scene {} has a different resolution", s.seed)));
            }
            for c in 0..3 {
                images.extend(s.rgb.iter().map(|p| T::lit(p[c].clamp(-1.0, 1.0))));
            }
            for c in 0..3 {
                normals.extend(s.normals.normals.iter().map(|n| T::lit(n[c].clamp(-1.0, 1.0))));
            }
            for c in 0..3 {
                small.extend(st.normals.iter().map(|n| T::lit(n[c].clamp(-1.0, 1.0))));
            }
            labels.extend(codebook.quantize(&s.normals));
        }
        Ok(Batch {
            images: Tensor::new([m, 3, h, w], images)?,
            normals: Tensor::new([m, 3, h, w], normals)?,
            structure_normals: Tensor::new([m, 3, sh, sw], small)?,
            labels,
            seeds: scenes.iter().map(|s| s.seed).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// Scenes are rendered on demand, so any batch can be produced without
/// replaying the ones before it.
#[derive(Debug, Clone)]
pub struct Dataset {
    config: DatasetConfig,
    codebook: NormalCodebook,
}

impl Dataset {
    pub fn new(config: DatasetConfig, codebook: NormalCodebook) -> Result<Self> {
        if config.batch_size == 0 || config.count < config.batch_size {
            return Err(Error::config(
                "dataset",
                format!("count {} must be at least the batch size {}", config.count, config.batch_size),
            ));
        }
        if config.count as u64 >= TEST_BIT {
            return Err(Error::config("dataset", format!("count {} is too large", config.count)));
        }
        if codebook.len() != NUM_CLASSES {
            return Err(Error::config(
                "dataset",
                format!("codebook has {} classes, expected {}", codebook.len(), NUM_CLASSES),
            ));
        }
        Ok(Dataset { config, codebook })
    }

    pub fn config(&self) -> &DatasetConfig {
        &self.config
    }

    pub fn codebook(&self) -> &NormalCodebook {
        &self.codebook
    }

    /// Full batches per epoch; the remainder is dropped.
    pub fn batches_per_epoch(&self) -> usize {
        self.config.count / self.config.batch_size
    }

    /// Scene order for `epoch`.
    pub fn order(&self, epoch: usize) -> Vec<usize> {
        let tag = rng::tag("synth/order") ^ rng::tag(self.config.split.name());
        let mut r = rng::stream(self.config.seed, tag, epoch as u64);
        let mut order: Vec<usize> = (0..self.config.count).collect();
        order.shuffle(&mut r);
        order
    }

    pub fn seed_of(&self, index: usize) -> u64 {
        scene_seed(self.config.seed, self.config.split, index)
    }

    /// Scene `index` at the style resolution.
    pub fn scene(&self, index: usize) -> SceneSample {
        let size = self.config.scale.style_size();
        generate_scene(self.seed_of(index), size, size)
    }

    /// Batch number `iteration`, counting across epochs.
    pub fn batch<T: Real>(&self, iteration: usize) -> Result<Batch<T>> {
        let per_epoch = self.batches_per_epoch();
        let order = self.order(iteration / per_epoch);
        let start = (iteration % per_epoch) * self.config.batch_size;
        self.batch_of(&order[start..start + self.config.batch_size])
    }

    pub fn batch_of<T: Real>(&self, indices: &[usize]) -> Result<Batch<T>> {
        let size = self.config.scale.structure_size();
        let scenes: Vec<SceneSample> = indices.iter().map(|&i| self.scene(i)).collect();
        let structure: Vec<NormalMap> = indices
            .iter()
            .map(|&i| generate_scene(self.seed_of(i), size, size).normals)
            .collect();
        Batch::from_scenes(&scenes, &structure, &self.codebook)
    }

    pub fn iter<T: Real>(&self, epochs: usize) -> impl Iterator<Item = Result<Batch<T>>> + '_ {
        (0..epochs * self.batches_per_epoch()).map(move |i| self.batch(i))
    }
}

/// Codebook from depth-derived normals of the first `scenes` training scenes
/// at the style resolution.
pub fn build_codebook(seed: u64, scale: Scale, scenes: usize) -> Result<NormalCodebook> {
    let size = scale.style_size();
    let mut normals = Vec::with_capacity(scenes * size * size);
    for i in 0..scenes {
        let s = generate_scene(scene_seed(seed, Split::Train, i), size, size);
        normals.extend(normals_from_depth(&s.depth, window_for_size(size))?.normals);
    }
    if normals.len() < 10_000 {
        return Err(Error::config(
            "build_codebook",
            format!("{} normals from {} scenes; need at least 10000", normals.len(), scenes),
        ));
    }
    kmeans_codebook(&normals, NUM_CLASSES, seed)
}
