//! Rotated bird's-eye-view and 3D IoU of oriented boxes.

use crate::geometry::Box3D;
use crate::scalar::Scalar;

/// Signed shoelace area; positive for counter-clockwise polygons.
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    let n = poly.len();
    if n < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        acc += x0 * y1 - x1 * y0;
    }
    acc * T::c(0.5)
}

fn ensure_ccw<T: Scalar>(mut poly: Vec<[T; 2]>) -> Vec<[T; 2]> {
    if polygon_area(&poly) < T::zero() {
        poly.reverse();
    }
    poly
}

#[inline]
fn cross<T: Scalar>(a: [T; 2], b: [T; 2], p: [T; 2]) -> T {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Sutherland–Hodgman clip of `subject` against the convex, counter-clockwise `clip`.
pub fn clip_convex<T: Scalar>(subject: &[[T; 2]], clip: &[[T; 2]]) -> Vec<[T; 2]> {
    let mut out: Vec<[T; 2]> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % m];
        let input = std::mem::take(&mut out);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let dc = cross(a, b, cur);
            let dp = cross(a, b, prev);
            let cur_in = dc >= T::zero();
            let prev_in = dp >= T::zero();
            if cur_in != prev_in {
                let t = dp / (dp - dc);
                out.push([prev[0] + (cur[0] - prev[0]) * t, prev[1] + (cur[1] - prev[1]) * t]);
            }
            if cur_in {
                out.push(cur);
            }
        }
    }
    out
}

/// Intersection area of two convex polygons.
pub fn convex_intersection_area<T: Scalar>(a: &[[T; 2]], b: &[[T; 2]]) -> T {
    let a = ensure_ccw(a.to_vec());
    let b = ensure_ccw(b.to_vec());
    polygon_area(&clip_convex(&a, &b)).abs()
}

fn bev_overlap<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> Option<(T, T, T)> {
    let area_a = a.dims[0] * a.dims[1];
    let area_b = b.dims[0] * b.dims[1];
    if !(area_a > T::zero()) || !(area_b > T::zero()) {
        log::warn!("degenerate box footprint in IoU; returning 0");
        return None;
    }
    let inter = convex_intersection_area(&a.bev_corners(), &b.bev_corners());
    Some((inter, area_a, area_b))
}

/// Rotated bird's-eye-view IoU of the two footprints.
pub fn bev_iou<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    match bev_overlap(a, b) {
        None => T::zero(),
        Some((inter, aa, ab)) => {
            let union = aa + ab - inter;
            (inter / union).max(T::zero()).min(T::one())
        }
    }
}

/// 3D IoU: footprint intersection times vertical overlap over the volume union.
pub fn iou3d<T: Scalar>(a: &Box3D<T>, b: &Box3D<T>) -> T {
    let Some((inter, _, _)) = bev_overlap(a, b) else {
        return T::zero();
    };
    let half = T::c(0.5);
    let (a0, a1) = (a.center[1] - a.dims[2] * half, a.center[1] + a.dims[2] * half);
    let (b0, b1) = (b.center[1] - b.dims[2] * half, b.center[1] + b.dims[2] * half);
    let dy = (a1.min(b1) - a0.max(b0)).max(T::zero());
    let inter_v = inter * dy;
    let union = a.volume() + b.volume() - inter_v;
    if !(union > T::zero()) {
        return T::zero();
    }
    (inter_v / union).max(T::zero()).min(T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    fn sq(x: f64, z: f64, yaw: f64) -> Box3D<f64> {
        Box3D::new([x, 0.0, z], [1.0, 1.0, 1.0], yaw, 0).unwrap()
    }

    #[test]
    fn hand_geometry_cases() {
        assert!((bev_iou(&sq(0.0, 10.0, 0.0), &sq(0.0, 10.0, 0.0)) - 1.0).abs() < 1e-12);
        assert_eq!(bev_iou(&sq(0.0, 10.0, 0.0), &sq(3.0, 10.0, 0.0)), 0.0);
        // intersection 0.5, union 1.5
        assert!((bev_iou(&sq(0.0, 10.0, 0.0), &sq(0.5, 10.0, 0.0)) - 1.0 / 3.0).abs() < 1e-9);
        // square rotated 45° over itself: octagon of area 2(√2 − 1)
        let oct = 2.0 * (2f64.sqrt() - 1.0);
        let want = oct / (2.0 - oct);
        assert!((bev_iou(&sq(0.0, 10.0, 0.0), &sq(0.0, 10.0, FRAC_PI_4)) - want).abs() < 1e-9);
    }

    #[test]
    fn iou3d_cases() {
        let a = sq(0.0, 10.0, 0.0);
        assert!((iou3d(&a, &a) - 1.0).abs() < 1e-12);
        let mut up = a;
        up.center[1] -= 1.0;
        assert_eq!(iou3d(&a, &up), 0.0);
        let mut half = a;
        half.center[1] -= 0.5;
        assert!((iou3d(&a, &half) - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_footprint_is_zero() {
        let mut a = sq(0.0, 10.0, 0.0);
        a.dims[0] = 0.0;
        assert_eq!(bev_iou(&a, &sq(0.0, 10.0, 0.0)), 0.0);
        assert_eq!(iou3d(&a, &sq(0.0, 10.0, 0.0)), 0.0);
    }

    fn arb_box() -> impl Strategy<Value = Box3D<f64>> {
        (-3.0..3.0f64, 5.0..11.0f64, 0.3..4.0f64, 0.3..3.0f64, -3.1..3.1f64)
            .prop_map(|(x, z, l, w, yaw)| Box3D::new([x, 0.0, z], [l, w, 1.0], yaw, 0).unwrap())
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = bev_iou(&a, &b);
            let ba = bev_iou(&b, &a);
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&ab));
        }

        #[test]
        fn rotation_equivariant(a in arb_box(), b in arb_box(), phi in -3.0..3.0f64) {
            let pivot = [1.0, 7.0];
            let rot = |bx: &Box3D<f64>| {
                let (s, c) = phi.sin_cos();
                let dx = bx.center[0] - pivot[0];
                let dz = bx.center[2] - pivot[1];
                let mut r = *bx;
                // yaw rotates (x, z) by [[c, s], [-s, c]]
                r.center[0] = pivot[0] + c * dx + s * dz;
                r.center[2] = pivot[1] - s * dx + c * dz;
                r.yaw += phi;
                r
            };
            let before = bev_iou(&a, &b);
            let after = bev_iou(&rot(&a), &rot(&b));
            prop_assert!((before - after).abs() < 1e-9);
        }
    }
}
