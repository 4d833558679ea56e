use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::Box3D;

/// Nominal footprint and height of one abstract category.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CategorySpec {
    /// (length, width, height) in meters.
    pub dims: [f64; 3],
    /// Relative uniform jitter applied to each dimension.
    pub jitter: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub min_boxes: usize,
    pub max_boxes: usize,
    pub z_range: (f64, f64),
    pub x_limit: f64,
    /// Objects are placed within this half-angle of the optical axis.
    pub placement_half_angle: f64,
    pub camera_height: f64,
    pub yaw_range: (f64, f64),
    pub categories: Vec<CategorySpec>,
    /// Minimum clearance between footprint circumcircles, meters.
    pub min_gap: f64,
    pub n_patterns: u32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            min_boxes: 1,
            max_boxes: 12,
            z_range: (4.0, 60.0),
            x_limit: 25.0,
            // 0.9 of the canonical half field of view (1000 px over 1280 px)
            placement_half_angle: 0.9 * (640.0f64 / 1000.0).atan(),
            camera_height: 1.65,
            yaw_range: (-PI, PI),
            categories: vec![
                CategorySpec {
                    dims: [3.9, 1.6, 1.5],
                    jitter: 0.08,
                },
                CategorySpec {
                    dims: [5.2, 2.0, 2.3],
                    jitter: 0.08,
                },
                CategorySpec {
                    dims: [1.8, 0.6, 1.7],
                    jitter: 0.08,
                },
            ],
            min_gap: 0.5,
            n_patterns: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub boxes: Vec<Box3D<f64>>,
    /// Height of the ground plane below the camera (y down), meters.
    pub ground_height: f64,
    pub pattern: u32,
}

fn footprint_radius(b: &Box3D<f64>) -> f64 {
    0.5 * (b.dims[0] * b.dims[0] + b.dims[1] * b.dims[1]).sqrt()
}

const PLACEMENT_ATTEMPTS: usize = 200;

/// Generates a scene as a pure function of `seed`.
///
/// Boxes rest on the ground plane, lie within the depth and lateral limits,
/// and have footprints separated by at least `min_gap`, so their BEV IoU is 0.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_target = rng.gen_range(cfg.min_boxes..=cfg.max_boxes.max(cfg.min_boxes));
    let pattern = rng.gen_range(0..cfg.n_patterns.max(1));
    let tan_half = cfg.placement_half_angle.tan();
    let mut boxes: Vec<Box3D<f64>> = Vec::with_capacity(n_target);
    'outer: for _ in 0..n_target {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let category = rng.gen_range(0..cfg.categories.len()) as u32;
            let spec = cfg.categories[category as usize];
            let dims = spec
                .dims
                .map(|d| d * (1.0 + spec.jitter * (2.0 * rng.gen::<f64>() - 1.0)));
            let z = rng.gen_range(cfg.z_range.0..=cfg.z_range.1);
            let x_lim = cfg.x_limit.min(z * tan_half);
            let x = rng.gen_range(-x_lim..=x_lim);
            let yaw = rng.gen_range(cfg.yaw_range.0..=cfg.yaw_range.1);
            let b = Box3D {
                center: [x, cfg.camera_height - 0.5 * dims[2], z],
                dims,
                yaw,
                category,
            };
            // The footprint's nearest point must stay in front of the camera.
            if z - footprint_radius(&b) < 1.0 {
                continue;
            }
            let clear = boxes.iter().all(|o| {
                let dx = o.center[0] - b.center[0];
                let dz = o.center[2] - b.center[2];
                (dx * dx + dz * dz).sqrt() > footprint_radius(o) + footprint_radius(&b) + cfg.min_gap
            });
            if clear {
                boxes.push(b);
                continue 'outer;
            }
        }
        if boxes.len() >= cfg.min_boxes {
            break;
        }
    }
    Scene {
        seed,
        boxes,
        ground_height: cfg.camera_height,
        pattern,
    }
}
