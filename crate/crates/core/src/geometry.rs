//! Pinhole camera math: intrinsics, field of view, box projection and the
//! field-of-view based focal simulation.
//!
//! Conventions: camera coordinates are x right, y down, z forward (meters).
//! Image coordinates place pixel `j` over `[j, j+1)`, so the image spans
//! `[0, W] × [0, H]` and pixel centers sit at half-integers.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
}

impl<T: Scalar> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn centered(focal: T, width: usize, height: usize) -> Result<Self> {
        let half = T::c(0.5);
        Self::new(
            focal,
            focal,
            T::from_usize(width).unwrap() * half,
            T::from_usize(height).unwrap() * half,
            width,
            height,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > T::zero() && self.fy > T::zero()) {
            return Err(Error::Domain(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Domain("image size must be at least 1x1".into()));
        }
        let w = T::from_usize(self.width).unwrap();
        let h = T::from_usize(self.height).unwrap();
        if !(self.cx >= T::zero() && self.cx < w && self.cy >= T::zero() && self.cy < h) {
            return Err(Error::Domain(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn width_f(&self) -> T {
        T::from_usize(self.width).unwrap()
    }

    pub fn height_f(&self) -> T {
        T::from_usize(self.height).unwrap()
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    #[inline]
    pub fn project(&self, p: [T; 3]) -> Option<[T; 2]> {
        if p[2] <= T::zero() {
            return None;
        }
        Some([self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy])
    }

    /// Inverse of [`project`](Self::project) for a known depth.
    #[inline]
    pub fn back_project(&self, uv: [T; 2], depth: T) -> [T; 3] {
        [
            (uv[0] - self.cx) * depth / self.fx,
            (uv[1] - self.cy) * depth / self.fy,
            depth,
        ]
    }

    pub fn contains(&self, uv: [T; 2]) -> bool {
        uv[0] >= T::zero() && uv[1] >= T::zero() && uv[0] < self.width_f() && uv[1] < self.height_f()
    }

    pub fn cast<U: Scalar>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::c(self.fx.to_f64c()),
            fy: U::c(self.fy.to_f64c()),
            cx: U::c(self.cx.to_f64c()),
            cy: U::c(self.cy.to_f64c()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Oriented 3D box in camera coordinates.
///
/// `dims` is (length, width, height); length runs along the object x axis,
/// which `yaw` rotates about the camera y axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box3D<T> {
    pub center: [T; 3],
    pub dims: [T; 3],
    pub yaw: T,
    pub category: u32,
}

impl<T: Scalar> Box3D<T> {
    pub fn new(center: [T; 3], dims: [T; 3], yaw: T, category: u32) -> Result<Self> {
        let b = Self {
            center,
            dims,
            yaw,
            category,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.center[2] > T::zero()) {
            return Err(Error::Domain(format!("box center depth {} not positive", self.center[2])));
        }
        if self.dims.iter().any(|d| !(*d > T::zero())) {
            return Err(Error::Domain("box dimensions must be positive".into()));
        }
        Ok(())
    }

    /// Footprint corners in the (x, z) ground plane, counter-clockwise.
    pub fn bev_corners(&self) -> [[T; 2]; 4] {
        let half = T::c(0.5);
        let (s, c) = self.yaw.sin_cos();
        let hl = self.dims[0] * half;
        let hw = self.dims[1] * half;
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, z]| [self.center[0] + c * x + s * z, self.center[2] - s * x + c * z])
    }

    /// The eight corners: indices 0..4 at the top (smaller y), 4..8 at the bottom.
    pub fn corners(&self) -> [[T; 3]; 8] {
        let half = T::c(0.5);
        let bev = self.bev_corners();
        let top = self.center[1] - self.dims[2] * half;
        let bot = self.center[1] + self.dims[2] * half;
        let mut out = [[T::zero(); 3]; 8];
        for i in 0..4 {
            out[i] = [bev[i][0], top, bev[i][1]];
            out[i + 4] = [bev[i][0], bot, bev[i][1]];
        }
        out
    }

    pub fn volume(&self) -> T {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn cast<U: Scalar>(&self) -> Box3D<U> {
        Box3D {
            center: self.center.map(|v| U::c(v.to_f64c())),
            dims: self.dims.map(|v| U::c(v.to_f64c())),
            yaw: U::c(self.yaw.to_f64c()),
            category: self.category,
        }
    }
}

/// Axis-aligned image rectangle in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Box2D<T> {
    pub xmin: T,
    pub ymin: T,
    pub xmax: T,
    pub ymax: T,
}

impl<T: Scalar> Box2D<T> {
    pub fn new(xmin: T, ymin: T, xmax: T, ymax: T) -> Result<Self> {
        if !(xmin < xmax && ymin < ymax) {
            return Err(Error::Degenerate(format!(
                "empty rectangle [{xmin}, {xmax}] x [{ymin}, {ymax}]"
            )));
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    pub fn width(&self) -> T {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> T {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> T {
        self.width().max(T::zero()) * self.height().max(T::zero())
    }

    /// True when clamping left nothing of the rectangle.
    pub fn is_empty(&self) -> bool {
        !(self.xmin < self.xmax && self.ymin < self.ymax)
    }

    pub fn center(&self) -> [T; 2] {
        let half = T::c(0.5);
        [(self.xmin + self.xmax) * half, (self.ymin + self.ymax) * half]
    }

    pub fn clamp_to(&self, width: T, height: T) -> Self {
        let z = T::zero();
        Self {
            xmin: self.xmin.max(z).min(width),
            ymin: self.ymin.max(z).min(height),
            xmax: self.xmax.max(z).min(width),
            ymax: self.ymax.max(z).min(height),
        }
    }

    /// Largest per-edge absolute difference.
    pub fn max_edge_diff(&self, other: &Self) -> T {
        (self.xmin - other.xmin)
            .abs()
            .max((self.ymin - other.ymin).abs())
            .max((self.xmax - other.xmax).abs())
            .max((self.ymax - other.ymax).abs())
    }
}

/// Field of view for focal `f` over an image `w` pixels wide: `2·atan(w / 2f)`.
pub fn fov_from_focal<T: Scalar>(f: T, w: T) -> Result<T> {
    if !(f > T::zero()) || !(w > T::zero()) {
        return Err(Error::Domain(format!("fov needs positive focal and width (f={f}, w={w})")));
    }
    Ok(T::c(2.0) * (w / (T::c(2.0) * f)).atan())
}

/// Bounding rectangle of the projected corners in front of the camera, not clamped.
pub fn project_box_unclamped<T: Scalar>(b: &Box3D<T>, k: &CameraIntrinsics<T>) -> Result<Box2D<T>> {
    let mut acc: Option<Box2D<T>> = None;
    for p in b.corners() {
        if let Some([u, v]) = k.project(p) {
            acc = Some(match acc {
                None => Box2D {
                    xmin: u,
                    ymin: v,
                    xmax: u,
                    ymax: v,
                },
                Some(r) => Box2D {
                    xmin: r.xmin.min(u),
                    ymin: r.ymin.min(v),
                    xmax: r.xmax.max(u),
                    ymax: r.ymax.max(v),
                },
            });
        }
    }
    acc.ok_or_else(|| Error::Projection("every box corner is behind the camera".into()))
}

/// Axis-aligned hull of the projected box corners, clamped to the image.
///
/// Boxes entirely outside the frame yield an empty (zero-area) rectangle.
pub fn project_box<T: Scalar>(b: &Box3D<T>, k: &CameraIntrinsics<T>) -> Result<Box2D<T>> {
    Ok(project_box_unclamped(b, k)?.clamp_to(k.width_f(), k.height_f()))
}

/// Admissible focal range and pad value for [`simulate_intrinsic`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationConfig<T> {
    pub focal_range: (T, T),
    pub pad_value: T,
}

impl<T: Scalar> Default for SimulationConfig<T> {
    fn default() -> Self {
        Self {
            focal_range: (T::c(700.0), T::c(1300.0)),
            pad_value: T::zero(),
        }
    }
}

/// The centered source window a simulated view resamples from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropWindow {
    /// Even crop size in source pixels; larger than the image when zooming out.
    pub width: usize,
    pub height: usize,
}

impl CropWindow {
    /// Horizontal and vertical magnification actually applied to pixel content.
    pub fn pixel_scale<T: Scalar>(&self, k: &CameraIntrinsics<T>) -> (T, T) {
        (
            k.width_f() / T::from_usize(self.width).unwrap(),
            k.height_f() / T::from_usize(self.height).unwrap(),
        )
    }

    /// Maps a source image point to the simulated image.
    pub fn map_point<T: Scalar>(&self, k: &CameraIntrinsics<T>, uv: [T; 2]) -> [T; 2] {
        let half = T::c(0.5);
        let (sx, sy) = self.pixel_scale(k);
        let (w2, h2) = (k.width_f() * half, k.height_f() * half);
        [(uv[0] - w2) * sx + w2, (uv[1] - h2) * sy + h2]
    }
}

fn round_even<T: Scalar>(x: T) -> usize {
    let v = (x / T::c(2.0)).round() * T::c(2.0);
    v.max(T::zero()).to_usize().unwrap_or(0)
}

/// Crop window for re-imaging with focal `f_target`.
pub fn simulation_crop<T: Scalar>(k: &CameraIntrinsics<T>, f_target: T) -> Result<CropWindow> {
    if !(f_target > T::zero()) {
        return Err(Error::Domain(format!("target focal {f_target} must be positive")));
    }
    let inv = k.fx / f_target;
    let width = round_even(k.width_f() * inv);
    let height = round_even(k.height_f() * inv);
    if width == 0 || height == 0 {
        return Err(Error::Degenerate(format!(
            "target focal {f_target} leaves an empty crop of a {}x{} image",
            k.width, k.height
        )));
    }
    Ok(CropWindow { width, height })
}

/// Re-images `img` as if captured with focal `f_target`: the centered crop
/// (zoom-in) or padded extension (zoom-out) of the source by `fx / f_target`
/// is bilinearly resampled back to the original resolution.
pub fn simulate_intrinsic<T: Scalar>(
    img: &Image<T>,
    k: &CameraIntrinsics<T>,
    f_target: T,
    cfg: &SimulationConfig<T>,
) -> Result<(Image<T>, CameraIntrinsics<T>)> {
    k.validate()?;
    if img.width != k.width || img.height != k.height {
        return Err(Error::Internal(format!(
            "image is {}x{} but intrinsics describe {}x{}",
            img.width, img.height, k.width, k.height
        )));
    }
    if !(f_target > T::zero()) {
        return Err(Error::Domain(format!("target focal {f_target} must be positive")));
    }
    let (lo, hi) = cfg.focal_range;
    if f_target < lo || f_target > hi {
        return Err(Error::Domain(format!(
            "target focal {f_target} outside admissible range [{lo}, {hi}]"
        )));
    }
    if f_target == k.fx {
        return Ok((img.clone(), *k));
    }
    let crop = simulation_crop(k, f_target)?;
    let s = f_target / k.fx;
    let half = T::c(0.5);
    let (w2, h2) = (k.width_f() * half, k.height_f() * half);
    let new_k = CameraIntrinsics {
        fx: f_target,
        fy: k.fy * s,
        cx: (k.cx - w2) * s + w2,
        cy: (k.cy - h2) * s + h2,
        width: k.width,
        height: k.height,
    };

    let mut out = Image::filled(img.height, img.width, img.channels, cfg.pad_value);
    let ox = (k.width_f() - T::from_usize(crop.width).unwrap()) * half;
    let oy = (k.height_f() - T::from_usize(crop.height).unwrap()) * half;
    let step_x = T::from_usize(crop.width).unwrap() / k.width_f();
    let step_y = T::from_usize(crop.height).unwrap() / k.height_f();
    let mut px = vec![T::zero(); img.channels];
    for y in 0..img.height {
        let sy = oy + (T::from_usize(y).unwrap() + half) * step_y - half;
        for x in 0..img.width {
            let sx = ox + (T::from_usize(x).unwrap() + half) * step_x - half;
            img.sample_bilinear(sx, sy, cfg.pad_value, &mut px);
            out.pixel_mut(y, x).copy_from_slice(&px);
        }
    }
    Ok((out, new_k))
}

/// A label carried across an intrinsic change.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformedLabel<T> {
    pub box3d: Box3D<T>,
    /// Projected 3D center lies outside the new image (or behind the camera).
    pub out_of_frame: bool,
}

/// Carries 3D labels to a simulated view. Geometry is untouched; only the
/// out-of-frame flag depends on the new intrinsics.
pub fn transform_labels<T: Scalar>(
    boxes: &[Box3D<T>],
    _k_old: &CameraIntrinsics<T>,
    k_new: &CameraIntrinsics<T>,
) -> Vec<TransformedLabel<T>> {
    boxes
        .iter()
        .map(|b| TransformedLabel {
            box3d: *b,
            out_of_frame: !k_new.project(b.center).is_some_and(|uv| k_new.contains(uv)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn k(f: f64) -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(f, f, 640.0, 360.0, 1280, 720).unwrap()
    }

    #[test]
    fn fov_reference_values() {
        assert_eq!(fov_from_focal(640.0, 1280.0).unwrap(), FRAC_PI_2);
        // 2·atan(1280 / 1400), 2·atan(1280 / 2600)
        assert!((fov_from_focal(700.0f64, 1280.0).unwrap() - 1.481_303_863_885_665_5).abs() < 1e-6);
        assert!((fov_from_focal(1300.0f64, 1280.0).unwrap() - 0.914_949_695_792_050_3).abs() < 1e-6);
        assert!(fov_from_focal(0.0, 1280.0).is_err());
        assert!(fov_from_focal(700.0, -1.0).is_err());
        let t = fov_from_focal(1e-9, 1280.0).unwrap();
        assert!(t < PI && t > 0.0);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 1.0, 1.0, 0, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 1, 1).is_ok());
    }

    #[test]
    fn unit_cube_projection() {
        let cube = Box3D::new([0.0, 0.0, 10.0], [1.0, 1.0, 1.0], 0.0, 0).unwrap();
        let b = project_box(&cube, &k(1000.0)).unwrap();
        // The near face (z = 9.5) spans ±0.5·1000/9.5 px.
        let half = 500.0 / 9.5;
        assert!((b.xmin - (640.0 - half)).abs() < 1e-9);
        assert!((b.ymax - (360.0 + half)).abs() < 1e-9);
        assert!((b.width() - 1000.0 / 9.5).abs() < 1e-9);
        assert!((b.height() - 1000.0 / 9.5).abs() < 1e-9);
        assert_eq!(b.center(), [640.0, 360.0]);

        let far = Box3D::new([0.0, 0.0, 20.0], [1.0, 1.0, 1.0], 0.0, 0).unwrap();
        let bf = project_box(&far, &k(1000.0)).unwrap();
        assert!((bf.width() - 1000.0 / 19.5).abs() < 1e-9);
        // near face moves from 9.5 m to 19.5 m
        assert!((bf.width() / b.width() - 9.5 / 19.5).abs() < 1e-12);
    }

    #[test]
    fn projected_width_is_linear_in_focal() {
        let b = Box3D::new([0.0, 0.0, 30.0], [2.0, 1.0, 1.0], 0.0, 0).unwrap();
        let w1 = project_box_unclamped(&b, &k(500.0)).unwrap().width();
        let w2 = project_box_unclamped(&b, &k(1000.0)).unwrap().width();
        assert!((w2 - 2.0 * w1).abs() < 1e-9);
    }

    #[test]
    fn box_behind_camera_is_an_error() {
        let mut b = Box3D::new([0.0, 0.0, 10.0], [1.0, 1.0, 1.0], 0.0, 0).unwrap();
        b.center[2] = -10.0;
        assert!(matches!(project_box(&b, &k(1000.0)), Err(Error::Projection(_))));
        assert!(b.validate().is_err());
    }

    #[test]
    fn crop_width_matches_hand_arithmetic() {
        let kk = CameraIntrinsics::new(900.0, 900.0, 640.0, 192.0, 1280, 384).unwrap();
        let crop = simulation_crop(&kk, 1300.0).unwrap();
        // 1280 · 900 / 1300 = 886.15 → nearest even 886
        assert_eq!(crop.width, 886);
        assert_eq!(crop.height, 266);
    }

    #[test]
    fn simulate_identity_and_errors() {
        let kk = CameraIntrinsics::new(1000.0, 1000.0, 32.0, 16.0, 64, 32).unwrap();
        let img = Image::from_vec(32, 64, 1, (0..64 * 32).map(|i| (i % 7) as f64).collect()).unwrap();
        let cfg = SimulationConfig::default();
        let (same, k2) = simulate_intrinsic(&img, &kk, 1000.0, &cfg).unwrap();
        assert_eq!(same, img);
        assert_eq!(k2, kk);
        assert!(matches!(simulate_intrinsic(&img, &kk, -5.0, &cfg), Err(Error::Domain(_))));
        assert!(matches!(simulate_intrinsic(&img, &kk, 1400.0, &cfg), Err(Error::Domain(_))));
        let wide = SimulationConfig {
            focal_range: (1.0, 1e9),
            pad_value: 0.0,
        };
        assert!(matches!(simulate_intrinsic(&img, &kk, 1e8, &wide), Err(Error::Degenerate(_))));
    }

    #[test]
    fn simulate_zoom_in_magnifies_and_zoom_out_pads() {
        let kk = CameraIntrinsics::new(1000.0, 1000.0, 32.0, 16.0, 64, 32).unwrap();
        // Bright square in the middle.
        let mut img = Image::filled(32, 64, 1, 0.0f64);
        for y in 12..20 {
            for x in 28..36 {
                img.pixel_mut(y, x)[0] = 1.0;
            }
        }
        let cfg = SimulationConfig {
            focal_range: (500.0, 2000.0),
            pad_value: -1.0,
        };
        let count = |im: &Image<f64>| im.data.iter().filter(|v| **v > 0.5).count();
        let (zin, kin) = simulate_intrinsic(&img, &kk, 2000.0, &cfg).unwrap();
        assert_eq!(kin.fx, 2000.0);
        assert_eq!(kin.cx, 32.0);
        assert!(count(&zin) > 3 * count(&img));
        let (zout, _) = simulate_intrinsic(&img, &kk, 500.0, &cfg).unwrap();
        assert!(count(&zout) < count(&img));
        assert_eq!(zout.get(0, 0, 0), -1.0);

        // Round trip restores dimensions and roughly the content.
        let (back, kb) = simulate_intrinsic(&zin, &kin, 1000.0, &cfg).unwrap();
        assert_eq!((back.width, back.height), (img.width, img.height));
        assert_eq!(kb.fx, 1000.0);
        let diff: f64 = back
            .data
            .iter()
            .zip(&img.data)
            .filter(|(b, _)| **b >= 0.0)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / img.data.len() as f64;
        assert!(diff < 0.05, "round trip mean abs diff {diff}");
    }

    #[test]
    fn transform_labels_flags_but_keeps_geometry() {
        let ko = k(700.0);
        let kn = k(1300.0);
        let center = Box3D::new([0.0, 0.0, 20.0], [4.0, 1.8, 1.5], 0.3, 1).unwrap();
        let border = Box3D::new([11.0, 0.0, 20.0], [4.0, 1.8, 1.5], -0.2, 0).unwrap();
        let same = transform_labels(&[center, border], &ko, &ko);
        assert!(same.iter().all(|l| !l.out_of_frame));
        let moved = transform_labels(&[center, border], &ko, &kn);
        assert_eq!(moved[0].box3d, center);
        assert_eq!(moved[1].box3d, border);
        assert!(!moved[0].out_of_frame);
        assert!(moved[1].out_of_frame);
        let a0 = project_box(&center, &ko).unwrap().area();
        let a1 = project_box(&center, &kn).unwrap().area();
        assert!(a1 > a0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fov_strictly_decreases_with_focal(w in 16.0f64..4096.0, f in 10.0f64..5000.0, df in 1e-3f64..500.0) {
                prop_assert!(fov_from_focal(f + df, w).unwrap() < fov_from_focal(f, w).unwrap());
            }

            #[test]
            fn projection_on_simulated_view_follows_the_crop(
                x in -4.0f64..4.0,
                z in 15.0f64..45.0,
                yaw in -3.1f64..3.1,
                l in 1.0f64..5.0,
                f_new in 700.0f64..1300.0,
            ) {
                let ko = k(1000.0);
                let b = Box3D::new([x, 1.0, z], [l, 1.8, 1.5], yaw, 0).unwrap();
                let crop = simulation_crop(&ko, f_new).unwrap();
                let kn = CameraIntrinsics::new(f_new, f_new, ko.cx, ko.cy, ko.width, ko.height).unwrap();
                let old = project_box_unclamped(&b, &ko).unwrap();
                let [x0, y0] = crop.map_point(&ko, [old.xmin, old.ymin]);
                let [x1, y1] = crop.map_point(&ko, [old.xmax, old.ymax]);
                let scaled = Box2D::new(x0, y0, x1, y1).unwrap();
                prop_assert!(project_box_unclamped(&b, &kn).unwrap().max_edge_diff(&scaled) <= 1.0);
            }

            #[test]
            fn transform_labels_leaves_3d_fields_bitwise(
                c in prop::array::uniform3(-20.0f64..20.0),
                d in prop::array::uniform3(0.5f64..5.0),
                yaw in -3.2f64..3.2,
                f_new in 300.0f64..3000.0,
            ) {
                let b = Box3D::new([c[0], c[1], c[2].abs() + 1.0], d, yaw, 2).unwrap();
                let out = transform_labels(&[b], &k(1000.0), &k(f_new));
                let bits = |b: &Box3D<f64>| {
                    let mut v: Vec<u64> = b.center.iter().chain(&b.dims).map(|x| x.to_bits()).collect();
                    v.push(b.yaw.to_bits());
                    v
                };
                prop_assert_eq!(bits(&out[0].box3d), bits(&b));
                prop_assert_eq!(out[0].box3d.category, 2);
            }
        }
    }
}
