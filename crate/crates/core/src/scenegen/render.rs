use crate::geometry::{project_box, project_box_unclamped, Box2D, Box3D, CameraIntrinsics};
use crate::image::Image;

use super::scene::Scene;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Visibility {
    /// Projected center outside the image.
    OutOfFrame = 0,
    /// Occluded or truncated.
    Partial = 1,
    Full = 2,
}

impl Visibility {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::OutOfFrame),
            1 => Some(Self::Partial),
            2 => Some(Self::Full),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Label {
    pub box3d: Box3D<f64>,
    pub box2d: Box2D<f64>,
    pub visibility: Visibility,
    /// Fraction of the object's in-frame silhouette not covered by nearer objects.
    /// Fully visible objects also fill at least [`FULL_VISIBILITY`] of their 2D box.
    pub unoccluded: f64,
}

/// One image with its camera and ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub scene_seed: u64,
    pub intrinsics: CameraIntrinsics<f64>,
    pub image: Image<f32>,
    pub labels: Vec<Label>,
}

/// Per-pixel object index of the last render, `-1` for background.
#[derive(Clone, Debug, PartialEq)]
pub struct IdBuffer {
    pub width: usize,
    pub height: usize,
    pub ids: Vec<i32>,
}

impl IdBuffer {
    pub fn get(&self, y: usize, x: usize) -> i32 {
        self.ids[y * self.width + x]
    }
}

/// Fraction of an object's silhouette that must remain visible to count as fully visible.
pub const FULL_VISIBILITY: f64 = 0.9;

const NEAR_PLANE: f64 = 0.05;

const SKY: [[f32; 3]; 4] = [
    [0.55, 0.70, 0.90],
    [0.75, 0.78, 0.82],
    [0.85, 0.62, 0.45],
    [0.35, 0.40, 0.60],
];
const GROUND: [[f32; 3]; 4] = [
    [0.32, 0.33, 0.30],
    [0.40, 0.36, 0.30],
    [0.26, 0.30, 0.26],
    [0.36, 0.36, 0.40],
];
const CATEGORY_BASE: [[f32; 3]; 6] = [
    [0.85, 0.15, 0.10],
    [0.10, 0.35, 0.85],
    [0.95, 0.80, 0.10],
    [0.15, 0.75, 0.25],
    [0.70, 0.20, 0.75],
    [0.10, 0.80, 0.80],
];
/// Shading factor per face: four sides, then top and bottom.
const FACE_SHADE: [f32; 6] = [1.0, 0.8, 0.62, 0.45, 0.9, 0.3];

fn face_color(category: u32, face: usize) -> [f32; 3] {
    let base = CATEGORY_BASE[category as usize % CATEGORY_BASE.len()];
    base.map(|c| (c * FACE_SHADE[face]).min(1.0))
}

/// Corner indices per face (sides 0..4, top, bottom).
const FACES: [[usize; 4]; 6] = [
    [0, 1, 5, 4],
    [1, 2, 6, 5],
    [2, 3, 7, 6],
    [3, 0, 4, 7],
    [0, 1, 2, 3],
    [4, 5, 6, 7],
];

fn background(scene: &Scene, k: &CameraIntrinsics<f64>, img: &mut Image<f32>) {
    let p = scene.pattern as usize % SKY.len();
    for v in 0..k.height {
        let dy = (v as f64 + 0.5 - k.cy) / k.fy;
        for u in 0..k.width {
            let px = img.pixel_mut(v, u);
            if dy > 1e-6 {
                let t = scene.ground_height / dy;
                let x = t * (u as f64 + 0.5 - k.cx) / k.fx;
                let checker = ((x / 2.0).floor() as i64 + (t / 2.0).floor() as i64).rem_euclid(2) as f32;
                let fade = (1.0 / (1.0 + t / 80.0)) as f32;
                for c in 0..3 {
                    px[c] = GROUND[p][c] * (0.85 + 0.15 * fade) + 0.05 * checker * fade;
                }
            } else {
                let h = (-dy).clamp(0.0, 1.0) as f32;
                for c in 0..3 {
                    px[c] = SKY[p][c] * (0.9 + 0.1 * h);
                }
            }
        }
    }
}

/// Clips a polygon to `z >= NEAR_PLANE`.
fn clip_near(poly: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let ain = a[2] >= NEAR_PLANE;
        let bin = b[2] >= NEAR_PLANE;
        if ain {
            out.push(a);
        }
        if ain != bin {
            let t = (NEAR_PLANE - a[2]) / (b[2] - a[2]);
            out.push([a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, NEAR_PLANE]);
        }
    }
    out
}

/// Fills a convex image-space polygon, calling `paint` for each covered pixel center.
fn fill_convex(poly: &[[f64; 2]], width: usize, height: usize, mut paint: impl FnMut(usize, usize)) {
    if poly.len() < 3 {
        return;
    }
    let area: f64 = (0..poly.len())
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    if area.abs() < 1e-12 {
        return;
    }
    let sign = area.signum();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in poly {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    let ys = (y0 - 0.5).ceil().max(0.0) as usize;
    let ye = ((y1 - 0.5).floor()).min(height as f64 - 1.0);
    let xs = (x0 - 0.5).ceil().max(0.0) as usize;
    let xe = ((x1 - 0.5).floor()).min(width as f64 - 1.0);
    if ye < 0.0 || xe < 0.0 {
        return;
    }
    for y in ys..=ye as usize {
        let py = y as f64 + 0.5;
        for x in xs..=xe as usize {
            let pxc = x as f64 + 0.5;
            let inside = (0..poly.len()).all(|i| {
                let a = poly[i];
                let b = poly[(i + 1) % poly.len()];
                sign * ((b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (pxc - a[0])) >= 0.0
            });
            if inside {
                paint(y, x);
            }
        }
    }
}

/// Rasterizes the scene under `k`: a procedural ground/sky background and
/// flat-shaded cuboids drawn far to near.
pub fn render_with_ids(scene: &Scene, k: &CameraIntrinsics<f64>) -> (Sample, IdBuffer) {
    let mut image = Image::filled(k.height, k.width, 3, 0.0f32);
    background(scene, k, &mut image);
    let mut ids = IdBuffer {
        width: k.width,
        height: k.height,
        ids: vec![-1; k.width * k.height],
    };
    let mut order: Vec<usize> = (0..scene.boxes.len()).collect();
    order.sort_by(|&a, &b| scene.boxes[b].center[2].total_cmp(&scene.boxes[a].center[2]).then(a.cmp(&b)));
    let mut silhouette = vec![0usize; scene.boxes.len()];
    for &bi in &order {
        let b = &scene.boxes[bi];
        let corners = b.corners();
        for (fi, face) in FACES.iter().enumerate() {
            let pts: Vec<[f64; 3]> = face.iter().map(|&i| corners[i]).collect();
            let fc = pts.iter().fold([0.0; 3], |acc, p| [acc[0] + p[0] / 4.0, acc[1] + p[1] / 4.0, acc[2] + p[2] / 4.0]);
            let normal = [fc[0] - b.center[0], fc[1] - b.center[1], fc[2] - b.center[2]];
            if normal[0] * fc[0] + normal[1] * fc[1] + normal[2] * fc[2] >= 0.0 {
                continue;
            }
            let clipped = clip_near(&pts);
            let proj: Vec<[f64; 2]> = clipped.iter().filter_map(|p| k.project(*p)).collect();
            let color = face_color(b.category, fi);
            fill_convex(&proj, k.width, k.height, |y, x| {
                let slot = &mut ids.ids[y * k.width + x];
                if *slot != bi as i32 {
                    *slot = bi as i32;
                    silhouette[bi] += 1;
                }
                image.pixel_mut(y, x).copy_from_slice(&color);
            });
        }
    }
    let mut owned = vec![0usize; scene.boxes.len()];
    for id in ids.ids.iter().filter(|i| **i >= 0) {
        owned[*id as usize] += 1;
    }
    let labels = scene
        .boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let unoccluded = if silhouette[i] > 0 {
                owned[i] as f64 / silhouette[i] as f64
            } else {
                0.0
            };
            let mut l = label_for(b, k, unoccluded, silhouette[i] > 0, false);
            if l.visibility == Visibility::Full && rect_fill(&ids, &l.box2d) < FULL_VISIBILITY {
                l.visibility = Visibility::Partial;
            }
            l
        })
        .collect();
    (
        Sample {
            scene_seed: scene.seed,
            intrinsics: *k,
            image,
            labels,
        },
        ids,
    )
}

/// Fraction of pixels whose centers lie inside `r` that show some object.
pub fn rect_fill(ids: &IdBuffer, r: &Box2D<f64>) -> f64 {
    let (x0, x1) = ((r.xmin - 0.5).ceil().max(0.0) as usize, ((r.xmax - 0.5).floor() + 1.0).max(0.0) as usize);
    let (y0, y1) = ((r.ymin - 0.5).ceil().max(0.0) as usize, ((r.ymax - 0.5).floor() + 1.0).max(0.0) as usize);
    let (x1, y1) = (x1.min(ids.width), y1.min(ids.height));
    let mut total = 0usize;
    let mut hit = 0usize;
    for y in y0..y1 {
        for x in x0..x1 {
            total += 1;
            hit += (ids.get(y, x) >= 0) as usize;
        }
    }
    if total == 0 {
        1.0
    } else {
        hit as f64 / total as f64
    }
}

pub fn render(scene: &Scene, k: &CameraIntrinsics<f64>) -> Sample {
    render_with_ids(scene, k).0
}

/// Builds the label of `b` under `k`.
///
/// `extra_truncation` marks content missing for reasons other than this
/// frame's bounds (e.g. a padded band in a simulated zoom-out).
pub fn label_for(b: &Box3D<f64>, k: &CameraIntrinsics<f64>, unoccluded: f64, on_screen: bool, extra_truncation: bool) -> Label {
    let box2d = project_box(b, k).unwrap_or(Box2D {
        xmin: 0.0,
        ymin: 0.0,
        xmax: 0.0,
        ymax: 0.0,
    });
    let in_frame = k.project(b.center).is_some_and(|uv| k.contains(uv));
    let truncated = project_box_unclamped(b, k).map_or(true, |r| {
        r.xmin < 0.0 || r.ymin < 0.0 || r.xmax > k.width_f() || r.ymax > k.height_f()
    });
    let visibility = if !in_frame || !on_screen || box2d.is_empty() {
        Visibility::OutOfFrame
    } else if truncated || extra_truncation || unoccluded < FULL_VISIBILITY {
        Visibility::Partial
    } else {
        Visibility::Full
    };
    Label {
        box3d: *b,
        box2d,
        visibility,
        unoccluded,
    }
}
