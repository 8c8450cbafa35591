//! Procedural RGBD scenes, normals from depth, the normal codebook and the
//! batched dataset built on them.

mod codebook;
mod dataset;
mod normals;
mod scene;

pub use codebook::{kmeans_codebook, NormalCodebook, CODEBOOK_ITERATIONS, CODEBOOK_TOLERANCE};
pub use dataset::{build_codebook, scene_seed, Batch, Dataset, DatasetConfig, Split};
pub use normals::{normals_from_depth, unproject, window_for_size, FALLBACK_NORMAL};
pub use scene::{
    generate_scene, generate_scene_with, DepthMap, Intrinsics, NormalMap, SceneOptions, SceneSample, Surface,
    FIELD_OF_VIEW_DEG, MAX_DEPTH, MIN_DEPTH,
};

/// Angle between two unit vectors, in degrees.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0);
    num_traits::Float::acos(d).to_degrees()
}
