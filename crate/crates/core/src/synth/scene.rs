//! Box-world scenes: a floor, a back wall, one side wall and a few
//! axis-aligned boxes, seen by a pinhole camera and ray cast.
//!
//! Camera frame: x right, y up, z toward the viewer; the camera looks down
//! -z and depth is `-z`. The camera is pitched down and yawed toward the side
//! wall, and boxes sit between the side wall and the camera, so every
//! visible surface has a normal with positive z in the camera frame.

use alloc::vec::Vec;

use nalgebra::{Matrix3, Vector3};
use num_traits::Float;
use rand::Rng;

use crate::rng::{self, StreamRng};

pub const FIELD_OF_VIEW_DEG: f64 = 60.0;
pub const MIN_DEPTH: f64 = 0.1;
pub const MAX_DEPTH: f64 = 10.0;

const PITCH_DEG: f64 = 15.0;
const YAW_DEG: f64 = 20.0;
/// Resolution of the internal check that every box is in view.
const VISIBILITY_GRID: usize = 16;
const MIN_BOX_PIXELS: usize = 6;

const PALETTE: [[f64; 3]; 10] = [
    [0.82, 0.78, 0.70],
    [0.55, 0.42, 0.30],
    [0.35, 0.45, 0.60],
    [0.70, 0.30, 0.25],
    [0.40, 0.60, 0.35],
    [0.90, 0.85, 0.55],
    [0.30, 0.30, 0.35],
    [0.65, 0.55, 0.75],
    [0.95, 0.95, 0.95],
    [0.50, 0.70, 0.75],
];

/// Pinhole intrinsics in pixels. Pixel `(u, v)` has its center at integer
/// coordinates; `v` grows downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels with a 60 degree horizontal field of view.
    pub fn for_size(width: usize, height: usize) -> Self {
        let f = (width as f64 / 2.0) / Float::tan((FIELD_OF_VIEW_DEG / 2.0).to_radians());
        Intrinsics {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Camera-frame ray through pixel `(u, v)` with z = -1.
    pub fn ray(&self, u: usize, v: usize) -> [f64; 3] {
        [(u as f64 - self.cx) / self.fx, -(v as f64 - self.cy) / self.fy, -1.0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    /// Row-major depths in meters.
    pub depth: Vec<f64>,
    pub intrinsics: Intrinsics,
}

impl DepthMap {
    pub fn at(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.width + u]
    }
}

/// Row-major unit normals in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub normals: Vec<[f64; 3]>,
}

impl NormalMap {
    pub fn at(&self, u: usize, v: usize) -> [f64; 3] {
        self.normals[v * self.width + u]
    }
}

/// Which surface a pixel sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Surface {
    Floor,
    BackWall,
    SideWall,
    /// `face` is 0..6 in the order -x, +x, -y, +y, -z, +z.
    Box { index: u8, face: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub seed: u64,
    pub depth: DepthMap,
    /// Analytic normals of the hit surfaces.
    pub normals: NormalMap,
    /// Row-major RGB in [-1, 1].
    pub rgb: Vec<[f64; 3]>,
    pub surfaces: Vec<Surface>,
}

impl SceneSample {
    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SceneOptions {
    /// Force the number of boxes; `None` draws 1 to 4.
    pub boxes: Option<usize>,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    /// Slab test: entry distance and entered face.
    fn hit(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, u8)> {
        let mut t_near = f64::NEG_INFINITY;
        let mut t_far = f64::INFINITY;
        let mut face = 0u8;
        for axis in 0..3 {
            if d[axis].abs() < 1e-12 {
                if o[axis] < self.min[axis] || o[axis] > self.max[axis] {
                    return None;
                }
                continue;
            }
            let t0 = (self.min[axis] - o[axis]) / d[axis];
            let t1 = (self.max[axis] - o[axis]) / d[axis];
            // Entering through the min face means travelling +axis, whose
            // outward normal is -axis.
            let (near, far, f) = if t0 < t1 {
                (t0, t1, 2 * axis as u8)
            } else {
                (t1, t0, 2 * axis as u8 + 1)
            };
            if near > t_near {
                t_near = near;
                face = f;
            }
            t_far = t_far.min(far);
        }
        (t_near <= t_far && t_near > 1e-9).then_some((t_near, face))
    }
}

fn face_normal(face: u8) -> Vector3<f64> {
    let mut n = Vector3::zeros();
    n[(face / 2) as usize] = if face % 2 == 0 { -1.0 } else { 1.0 };
    n
}

/// Resolution-independent description of one scene.
#[derive(Debug, Clone)]
struct Layout {
    camera_height: f64,
    back: f64,
    /// -1 for a wall on the left, +1 on the right.
    side: f64,
    side_distance: f64,
    boxes: Vec<Aabb>,
    albedo: Vec<[f64; 3]>,
    light: Vector3<f64>,
    ambient: f64,
    /// Camera-to-world rotation.
    rotation: Matrix3<f64>,
}

impl Layout {
    fn sample(seed: u64, options: SceneOptions) -> Layout {
        let mut r = rng::stream(seed, rng::tag("scene/layout"), 0);
        let camera_height = r.gen_range(1.2..1.8);
        let back = r.gen_range(3.5..5.5);
        let side = if r.gen::<bool>() { -1.0 } else { 1.0 };
        let side_distance = r.gen_range(1.5..2.5);
        let rotation = camera_rotation(side);
        let n_boxes = options.boxes.unwrap_or_else(|| r.gen_range(1..=4));
        let mut layout = Layout {
            camera_height,
            back,
            side,
            side_distance,
            boxes: Vec::new(),
            albedo: Vec::new(),
            light: Vector3::zeros(),
            ambient: 0.0,
            rotation,
        };
        for _ in 0..n_boxes {
            layout.place_box(&mut r);
        }
        let surfaces = 3 + layout.boxes.len();
        layout.albedo = (0..surfaces).map(|_| PALETTE[r.gen_range(0..PALETTE.len())]).collect();
        layout.light = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(0.3..1.0), r.gen_range(0.2..1.0)).normalize();
        layout.ambient = r.gen_range(0.25..0.45);
        layout
    }

    /// Add a box between the side wall and the camera, resampling until
    /// every box placed so far covers a few pixels of a coarse render. Gives
    /// up on this box after a fixed number of tries.
    fn place_box(&mut self, r: &mut StreamRng) {
        for _ in 0..64 {
            let candidate = self.random_box(r);
            self.boxes.push(candidate);
            if self.all_boxes_visible() {
                return;
            }
            self.boxes.pop();
        }
    }

    fn random_box(&self, r: &mut StreamRng) -> Aabb {
        let w = r.gen_range(0.3..1.0);
        let h = r.gen_range(0.3..1.2);
        let d = r.gen_range(0.3..1.0);
        // Offset of the box's inner edge from the wall, measured toward the
        // camera axis; the box never crosses x = -0.15 * side.
        let room = self.side_distance - 0.15 - w;
        let from_wall = r.gen_range(0.0..room);
        let (x0, x1) = if self.side < 0.0 {
            let x0 = -self.side_distance + from_wall;
            (x0, x0 + w)
        } else {
            let x1 = self.side_distance - from_wall;
            (x1 - w, x1)
        };
        let z1 = r.gen_range((-self.back + d)..-1.5);
        Aabb {
            min: Vector3::new(x0, 0.0, z1 - d),
            max: Vector3::new(x1, h, z1),
        }
    }

    fn all_boxes_visible(&self) -> bool {
        let intr = Intrinsics::for_size(VISIBILITY_GRID, VISIBILITY_GRID);
        let origin = self.origin();
        let mut hits = alloc::vec![0usize; self.boxes.len()];
        for i in 0..VISIBILITY_GRID * VISIBILITY_GRID {
            let d = self.world_ray(&intr, i % VISIBILITY_GRID, i / VISIBILITY_GRID);
            if let Some((_, Surface::Box { index, .. })) = self.trace(&origin, &d) {
                hits[index as usize] += 1;
            }
        }
        hits.iter().all(|&n| n >= MIN_BOX_PIXELS)
    }

    fn origin(&self) -> Vector3<f64> {
        Vector3::new(0.0, self.camera_height, 0.0)
    }

    fn world_ray(&self, intr: &Intrinsics, u: usize, v: usize) -> Vector3<f64> {
        let [x, y, z] = intr.ray(u, v);
        self.rotation * Vector3::new(x, y, z)
    }

    /// Nearest hit among the room planes and boxes.
    fn trace(&self, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, Surface)> {
        let mut best: Option<(f64, Surface)> = None;
        let mut consider = |t: f64, s: Surface| {
            if t > 1e-9 && best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, s));
            }
        };
        if d.y < 0.0 {
            consider(-o.y / d.y, Surface::Floor);
        }
        if d.z < 0.0 {
            consider((-self.back - o.z) / d.z, Surface::BackWall);
        }
        if d.x * self.side > 0.0 {
            consider((self.side * self.side_distance - o.x) / d.x, Surface::SideWall);
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if let Some((t, face)) = b.hit(o, d) {
                consider(t, Surface::Box { index: i as u8, face });
            }
        }
        best
    }

    fn world_normal(&self, s: Surface) -> Vector3<f64> {
        match s {
            Surface::Floor => Vector3::y(),
            Surface::BackWall => Vector3::z(),
            Surface::SideWall => Vector3::new(-self.side, 0.0, 0.0),
            Surface::Box { face, .. } => face_normal(face),
        }
    }

    fn albedo(&self, s: Surface) -> [f64; 3] {
        match s {
            Surface::Floor => self.albedo[0],
            Surface::BackWall => self.albedo[1],
            Surface::SideWall => self.albedo[2],
            Surface::Box { index, .. } => self.albedo[3 + index as usize],
        }
    }
}

/// Pitch down, then yaw toward the wall side.
fn camera_rotation(side: f64) -> Matrix3<f64> {
    let (sp, cp) = Float::sin_cos((-PITCH_DEG).to_radians());
    let pitch = Matrix3::new(1.0, 0.0, 0.0, 0.0, cp, -sp, 0.0, sp, cp);
    let (sy, cy) = Float::sin_cos((-side * YAW_DEG).to_radians());
    let yaw = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    yaw * pitch
}

/// Render the box-world scene for `seed` at `width x height`.
///
/// The same seed gives the same room at every resolution.
pub fn generate_scene(seed: u64, width: usize, height: usize) -> SceneSample {
    generate_scene_with(seed, width, height, SceneOptions::default())
}

pub fn generate_scene_with(seed: u64, width: usize, height: usize, options: SceneOptions) -> SceneSample {
    let layout = Layout::sample(seed, options);
    let intr = Intrinsics::for_size(width, height);
    let origin = layout.origin();
    let to_camera = layout.rotation.transpose();
    let n = width * height;
    let mut depth = Vec::with_capacity(n);
    let mut normals = Vec::with_capacity(n);
    let mut rgb = Vec::with_capacity(n);
    let mut surfaces = Vec::with_capacity(n);
    for v in 0..height {
        for u in 0..width {
            let d = layout.world_ray(&intr, u, v);
            let (t, s) = layout
                .trace(&origin, &d)
                .expect("every ray meets the back wall or the floor");
            let nw = layout.world_normal(s);
            let nc = to_camera * nw;
            // The ray's camera-frame z is -1, so the hit distance along it is
            // the depth.
            depth.push(t.clamp(MIN_DEPTH, MAX_DEPTH));
            normals.push([nc.x, nc.y, nc.z]);
            let shade = layout.ambient + (1.0 - layout.ambient) * nw.dot(&layout.light).max(0.0);
            let a = layout.albedo(s);
            rgb.push([
                (a[0] * shade) * 2.0 - 1.0,
                (a[1] * shade) * 2.0 - 1.0,
                (a[2] * shade) * 2.0 - 1.0,
            ]);
            surfaces.push(s);
        }
    }
    SceneSample {
        seed,
        depth: DepthMap {
            width,
            height,
            depth,
            intrinsics: intr,
        },
        normals: NormalMap {
            width,
            height,
            normals,
        },
        rgb,
        surfaces,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn key(n: [f64; 3]) -> [i64; 3] {
        n.map(|c| (c * 1e6).round() as i64)
    }

    fn whole(s: Surface) -> Surface {
        match s {
            Surface::Box { index, .. } => Surface::Box { index, face: 0 },
            other => other,
        }
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(generate_scene(9, 32, 32), generate_scene(9, 32, 32));
        assert_ne!(generate_scene(9, 32, 32).depth, generate_scene(10, 32, 32).depth);
    }

    #[test]
    fn empty_room_has_at_most_three_normals() {
        for seed in 0..20 {
            let s = generate_scene_with(seed, 40, 40, SceneOptions { boxes: Some(0) });
            let distinct: BTreeSet<[i64; 3]> = s.normals.normals.iter().map(|&n| key(n)).collect();
            assert!(distinct.len() <= 3, "seed {} has {}", seed, distinct.len());
        }
    }

    #[test]
    fn every_scene_shows_three_planar_regions() {
        for seed in 0..1000 {
            let s = generate_scene(seed, 24, 24);
            let regions: BTreeSet<Surface> = s.surfaces.iter().copied().collect();
            let planes = [Surface::Floor, Surface::BackWall, Surface::SideWall];
            let walls = planes.iter().filter(|p| regions.contains(p)).count();
            assert!(regions.len() >= 3, "seed {}", seed);
            assert_eq!(walls, 3, "seed {}", seed);
        }
    }

    #[test]
    fn normals_are_unit_and_face_the_camera() {
        for seed in 0..200 {
            let s = generate_scene(seed, 32, 32);
            for n in &s.normals.normals {
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                assert!((len - 1.0).abs() < 1e-4);
                assert!(n[2] > 0.0, "seed {} normal {:?}", seed, n);
            }
        }
    }

    #[test]
    fn depth_and_rgb_ranges() {
        for seed in 0..100 {
            let s = generate_scene(seed, 32, 32);
            assert!(s.depth.depth.iter().all(|&d| d > MIN_DEPTH && d < MAX_DEPTH));
            assert!(s.rgb.iter().flatten().all(|&c| (-1.0..=1.0).contains(&c)));
        }
    }

    #[test]
    fn boxes_are_seen() {
        for seed in 0..300 {
            let layout = Layout::sample(seed, SceneOptions::default());
            assert!(!layout.boxes.is_empty());
            for size in [18, 32, 64] {
                let s = generate_scene(seed, size, size);
                for i in 0..layout.boxes.len() {
                    assert!(
                        s.surfaces
                            .iter()
                            .any(|x| matches!(x, Surface::Box { index, .. } if *index as usize == i)),
                        "seed {} box {} at {}",
                        seed,
                        i,
                        size
                    );
                }
            }
        }
    }

    #[test]
    fn same_room_across_resolutions() {
        for seed in 0..50 {
            let small = generate_scene(seed, 18, 18);
            let large = generate_scene(seed, 32, 32);
            let a: BTreeSet<Surface> = small.surfaces.iter().map(|s| whole(*s)).collect();
            let b: BTreeSet<Surface> = large.surfaces.iter().map(|s| whole(*s)).collect();
            assert_eq!(a, b, "seed {}", seed);
        }
    }

    #[test]
    fn center_ray_points_down_the_axis() {
        let i = Intrinsics::for_size(5, 5);
        assert_eq!(i.ray(2, 2), [0.0, 0.0, -1.0]);
        assert!(i.ray(0, 2)[0] < 0.0);
        assert!(i.ray(2, 0)[1] > 0.0);
    }
}
