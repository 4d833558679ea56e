use super::config::{LossWeights, MatchCosts};
use super::matching::hungarian;

/// One ground-truth object in network coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub class: usize,
    /// Normalized `(cx, cy, w, h)` of the 2D box.
    pub box2d: [f64; 4],
    /// Normalized projection of the 3D center.
    pub center: [f64; 2],
    pub depth: f64,
    pub dims: [f64; 3],
    /// Yaw minus the azimuth of the viewing ray, meaningful modulo π.
    pub alpha: f64,
}

/// Orientation regression target: the doubled angle, so that `alpha` and
/// `alpha + π` (indistinguishable for a symmetric cuboid) coincide.
pub fn orientation_target(alpha: f64) -> [f64; 2] {
    let (s, c) = (2.0 * alpha).sin_cos();
    [s, c]
}

/// Inverse of [`orientation_target`], in `(-π/2, π/2]`.
pub fn orientation_angle(sin2: f64, cos2: f64) -> f64 {
    sin2.atan2(cos2) / 2.0
}

/// Ground truth of one image.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ImageTargets {
    pub objects: Vec<Target>,
    /// Supervised depth per stride-32 cell (`None` outside every object).
    pub dmap: Vec<Option<f64>>,
}

/// Network outputs of one image, row-major per query.
#[derive(Clone, Copy, Debug)]
pub struct PredView<'a> {
    pub n_queries: usize,
    /// `n_classes + 1` logits per query; the last one is background.
    pub logits: &'a [f64],
    pub boxes: &'a [f64],
    pub center: &'a [f64],
    pub depth: &'a [f64],
    pub dims: &'a [f64],
    pub yaw: &'a [f64],
    pub dmap: &'a [f64],
}

impl PredView<'_> {
    pub fn n_logits(&self) -> usize {
        self.logits.len() / self.n_queries
    }
}

/// Gradients matching the layout of [`PredView`].
#[derive(Clone, Debug, PartialEq)]
pub struct PredGrads {
    pub logits: Vec<f64>,
    pub boxes: Vec<f64>,
    pub center: Vec<f64>,
    pub depth: Vec<f64>,
    pub dims: Vec<f64>,
    pub yaw: Vec<f64>,
    pub dmap: Vec<f64>,
}

impl PredGrads {
    pub fn zeros(p: &PredView<'_>) -> Self {
        Self {
            logits: vec![0.0; p.logits.len()],
            boxes: vec![0.0; p.boxes.len()],
            center: vec![0.0; p.center.len()],
            depth: vec![0.0; p.depth.len()],
            dims: vec![0.0; p.dims.len()],
            yaw: vec![0.0; p.yaw.len()],
            dmap: vec![0.0; p.dmap.len()],
        }
    }

    fn scale_all(&mut self, matched: f64, dmap: f64) {
        for v in [&mut self.logits, &mut self.boxes, &mut self.center, &mut self.depth, &mut self.dims, &mut self.yaw] {
            v.iter_mut().for_each(|x| *x *= matched);
        }
        self.dmap.iter_mut().for_each(|x| *x *= dmap);
    }
}

/// Weighted loss terms. Raw sums until [`LossTerms::normalize`] is applied.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossTerms {
    pub class: f64,
    pub bbox: f64,
    pub giou: f64,
    pub center3d: f64,
    pub depth: f64,
    pub dims: f64,
    pub yaw: f64,
    pub dmap: f64,
    pub n_gt: usize,
    pub dmap_cells: usize,
}

impl LossTerms {
    pub fn l2d(&self) -> f64 {
        self.class + self.bbox + self.giou
    }

    pub fn l3d(&self) -> f64 {
        self.center3d + self.depth + self.dims + self.yaw
    }

    pub fn total(&self) -> f64 {
        self.l2d() + self.l3d() + self.dmap
    }

    pub fn add(&mut self, o: &LossTerms) {
        self.class += o.class;
        self.bbox += o.bbox;
        self.giou += o.giou;
        self.center3d += o.center3d;
        self.depth += o.depth;
        self.dims += o.dims;
        self.yaw += o.yaw;
        self.dmap += o.dmap;
        self.n_gt += o.n_gt;
        self.dmap_cells += o.dmap_cells;
    }

    /// Per-object terms divided by the object count (at least one), the
    /// depth-map term by its cell count. Returns the two scale factors.
    pub fn normalize(&mut self) -> (f64, f64) {
        let m = 1.0 / self.n_gt.max(1) as f64;
        let d = 1.0 / self.dmap_cells.max(1) as f64;
        self.class *= m;
        self.bbox *= m;
        self.giou *= m;
        self.center3d *= m;
        self.depth *= m;
        self.dims *= m;
        self.yaw *= m;
        self.dmap *= d;
        (m, d)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Sigmoid focal loss of one logit and its derivative.
pub fn focal_loss(x: f64, positive: bool, alpha: f64, gamma: f64) -> (f64, f64) {
    let p = sigmoid(x);
    if positive {
        let log_p = -softplus(-x);
        let q = 1.0 - p;
        let qg = q.powf(gamma);
        (-alpha * qg * log_p, alpha * qg * (gamma * p * log_p - q))
    } else {
        let log_q = -softplus(x);
        let pg = p.powf(gamma);
        (-(1.0 - alpha) * pg * log_q, (1.0 - alpha) * pg * (p - gamma * (1.0 - p) * log_q))
    }
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Generalized IoU of two `(cx, cy, w, h)` boxes and its gradient w.r.t. the first.
pub fn giou(p: &[f64], g: &[f64]) -> (f64, [f64; 4]) {
    let (px1, px2, py1, py2) = (p[0] - p[2] / 2.0, p[0] + p[2] / 2.0, p[1] - p[3] / 2.0, p[1] + p[3] / 2.0);
    let (gx1, gx2, gy1, gy2) = (g[0] - g[2] / 2.0, g[0] + g[2] / 2.0, g[1] - g[3] / 2.0, g[1] + g[3] / 2.0);
    let (pw, ph) = (px2 - px1, py2 - py1);
    let area_p = pw * ph;
    let area_g = (gx2 - gx1) * (gy2 - gy1);
    let iw = px2.min(gx2) - px1.max(gx1);
    let ih = py2.min(gy2) - py1.max(gy1);
    let (iw_pos, ih_pos) = (iw > 0.0, ih > 0.0);
    let inter = iw.max(0.0) * ih.max(0.0);
    let union = area_p + area_g - inter;
    let cw = px2.max(gx2) - px1.min(gx1);
    let ch = py2.max(gy2) - py1.min(gy1);
    let c = cw * ch;
    if !(union > 0.0) || !(c > 0.0) {
        return (-1.0, [0.0; 4]);
    }
    let value = inter / union - (c - union) / c;

    // Partial derivatives w.r.t. (x1, x2, y1, y2) of the predicted box.
    let active = iw_pos && ih_pos;
    let di = [
        if active && px1 > gx1 { -ih } else { 0.0 },
        if active && px2 < gx2 { ih } else { 0.0 },
        if active && py1 > gy1 { -iw } else { 0.0 },
        if active && py2 < gy2 { iw } else { 0.0 },
    ];
    let da = [-ph, ph, -pw, pw];
    let dc = [
        if px1 < gx1 { -ch } else { 0.0 },
        if px2 > gx2 { ch } else { 0.0 },
        if py1 < gy1 { -cw } else { 0.0 },
        if py2 > gy2 { cw } else { 0.0 },
    ];
    let mut d = [0.0; 4];
    for k in 0..4 {
        let du = da[k] - di[k];
        d[k] = di[k] / union - inter * du / (union * union) + du / c - union * dc[k] / (c * c);
    }
    (value, [d[0] + d[1], d[2] + d[3], (d[1] - d[0]) / 2.0, (d[3] - d[2]) / 2.0])
}

/// Pairwise matching cost, `objects × queries`.
pub fn cost_matrix(p: &PredView<'_>, t: &ImageTargets, c: &MatchCosts) -> Vec<f64> {
    let nq = p.n_queries;
    let nl = p.n_logits();
    let mut out = vec![0.0; t.objects.len() * nq];
    for (gi, obj) in t.objects.iter().enumerate() {
        for q in 0..nq {
            let prob = sigmoid(p.logits[q * nl + obj.class]);
            let b = &p.boxes[q * 4..q * 4 + 4];
            out[gi * nq + q] = c.class * (1.0 - prob)
                + c.bbox * l1(b, &obj.box2d)
                + c.giou * (1.0 - giou(b, &obj.box2d).0)
                + c.center3d * l1(&p.center[q * 2..q * 2 + 2], &obj.center);
        }
    }
    out
}

/// Query assigned to each ground-truth object.
pub fn match_targets(p: &PredView<'_>, t: &ImageTargets, c: &MatchCosts) -> Vec<usize> {
    let cost = cost_matrix(p, t, c);
    hungarian(&cost, t.objects.len(), p.n_queries)
}

/// Raw (unnormalized) weighted terms and their gradients for one image.
pub fn image_loss(
    p: &PredView<'_>,
    t: &ImageTargets,
    assignment: &[usize],
    w: &LossWeights,
    alpha: f64,
    gamma: f64,
) -> (LossTerms, PredGrads) {
    let nq = p.n_queries;
    let nl = p.n_logits();
    let background = nl - 1;
    let mut terms = LossTerms {
        n_gt: t.objects.len(),
        ..Default::default()
    };
    let mut gr = PredGrads::zeros(p);
    let mut target_class = vec![background; nq];
    for (gi, &q) in assignment.iter().enumerate() {
        target_class[q] = t.objects[gi].class;
    }
    for q in 0..nq {
        for k in 0..nl {
            let (v, d) = focal_loss(p.logits[q * nl + k], k == target_class[q], alpha, gamma);
            terms.class += w.class * v;
            gr.logits[q * nl + k] = w.class * d;
        }
    }
    for (gi, &q) in assignment.iter().enumerate() {
        let o = &t.objects[gi];
        let b = &p.boxes[q * 4..q * 4 + 4];
        terms.bbox += w.bbox * l1(b, &o.box2d);
        let (gv, gd) = giou(b, &o.box2d);
        terms.giou += w.giou * (1.0 - gv);
        for k in 0..4 {
            gr.boxes[q * 4 + k] += w.bbox * sign(b[k] - o.box2d[k]) - w.giou * gd[k];
        }
        let c = &p.center[q * 2..q * 2 + 2];
        terms.center3d += w.center3d * l1(c, &o.center);
        for k in 0..2 {
            gr.center[q * 2 + k] += w.center3d * sign(c[k] - o.center[k]);
        }
        terms.depth += w.depth * (p.depth[q] - o.depth).abs();
        gr.depth[q] += w.depth * sign(p.depth[q] - o.depth);
        let d = &p.dims[q * 3..q * 3 + 3];
        terms.dims += w.dim * l1(d, &o.dims);
        for k in 0..3 {
            gr.dims[q * 3 + k] += w.dim * sign(d[k] - o.dims[k]);
        }
        let y = &p.yaw[q * 2..q * 2 + 2];
        let ty = orientation_target(o.alpha);
        terms.yaw += w.yaw * l1(y, &ty);
        for k in 0..2 {
            gr.yaw[q * 2 + k] += w.yaw * sign(y[k] - ty[k]);
        }
    }
    for (i, target) in t.dmap.iter().enumerate() {
        if let Some(z) = target {
            terms.dmap += w.dmap * (p.dmap[i] - z).abs();
            gr.dmap[i] += w.dmap * sign(p.dmap[i] - z);
            terms.dmap_cells += 1;
        }
    }
    (terms, gr)
}

/// Matches and evaluates a batch; terms are normalized over the batch and the
/// gradients scaled to match.
pub fn batch_loss(
    preds: &[PredView<'_>],
    targets: &[ImageTargets],
    costs: &MatchCosts,
    w: &LossWeights,
    alpha: f64,
    gamma: f64,
) -> (LossTerms, Vec<PredGrads>, Vec<Vec<usize>>) {
    let mut total = LossTerms::default();
    let mut grads = Vec::with_capacity(preds.len());
    let mut assignments = Vec::with_capacity(preds.len());
    for (p, t) in preds.iter().zip(targets) {
        let a = match_targets(p, t, costs);
        let (terms, g) = image_loss(p, t, &a, w, alpha, gamma);
        total.add(&terms);
        grads.push(g);
        assignments.push(a);
    }
    let (m, d) = total.normalize();
    grads.iter_mut().for_each(|g| g.scale_all(m, d));
    (total, grads, assignments)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn focal_gradient_matches_differences() {
        for &x in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
            for pos in [true, false] {
                let h = 1e-6;
                let num = (focal_loss(x + h, pos, 0.25, 2.0).0 - focal_loss(x - h, pos, 0.25, 2.0).0) / (2.0 * h);
                assert!((focal_loss(x, pos, 0.25, 2.0).1 - num).abs() < 1e-7);
            }
        }
        // γ = 0 reduces to α-weighted cross-entropy
        let (v, _) = focal_loss(0.3, true, 0.25, 0.0);
        assert!((v + 0.25 * sigmoid(0.3).ln()).abs() < 1e-12);
    }

    #[test]
    fn giou_values_and_gradient() {
        let a = [0.5, 0.5, 0.2, 0.2];
        assert!((giou(&a, &a).0 - 1.0).abs() < 1e-12);
        // Disjoint boxes side by side: IoU 0, hull 0.2 × 0.1, union 0.02 → 0 - 0 = 0
        let (g, _) = giou(&[0.25, 0.5, 0.1, 0.1], &[0.35, 0.5, 0.1, 0.1]);
        assert!(g.abs() < 1e-12);
        let (g, _) = giou(&[0.1, 0.5, 0.1, 0.1], &[0.4, 0.5, 0.1, 0.1]);
        assert!((g - (0.0 - (0.04 - 0.02) / 0.04)).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let p: Vec<f64> = vec![rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4)];
            let t: Vec<f64> = vec![rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.05..0.4), rng.gen_range(0.05..0.4)];
            let (_, d) = giou(&p, &t);
            for k in 0..4 {
                let h = 1e-7;
                let mut up = p.clone();
                up[k] += h;
                let mut dn = p.clone();
                dn[k] -= h;
                let num = (giou(&up, &t).0 - giou(&dn, &t).0) / (2.0 * h);
                assert!((d[k] - num).abs() < 1e-5, "k={k} {} vs {num}", d[k]);
            }
        }
    }

    fn random_case(rng: &mut ChaCha8Rng, nq: usize, ngt: usize) -> (Vec<Vec<f64>>, ImageTargets) {
        let nl = 4;
        let mut gen = |n: usize, lo: f64, hi: f64| (0..n).map(|_| rng.gen_range(lo..hi)).collect::<Vec<f64>>();
        let bufs = vec![
            gen(nq * nl, -3.0, 3.0),
            gen(nq * 4, 0.1, 0.6),
            gen(nq * 2, 0.0, 1.0),
            gen(nq, 5.0, 40.0),
            gen(nq * 3, 1.0, 4.0),
            gen(nq * 2, -1.0, 1.0),
            gen(8, 5.0, 40.0),
        ];
        let objects = (0..ngt)
            .map(|_| Target {
                class: rng.gen_range(0..3),
                box2d: [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.05..0.3), rng.gen_range(0.05..0.3)],
                center: [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                depth: rng.gen_range(5.0..40.0),
                dims: [rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0), rng.gen_range(1.0..4.0)],
                alpha: rng.gen_range(-3.0..3.0),
            })
            .collect();
        let dmap = (0..8).map(|i| if i % 3 == 0 { Some(rng.gen_range(5.0..40.0)) } else { None }).collect();
        (bufs, ImageTargets { objects, dmap })
    }

    fn view(b: &[Vec<f64>], nq: usize) -> PredView<'_> {
        PredView {
            n_queries: nq,
            logits: &b[0],
            boxes: &b[1],
            center: &b[2],
            depth: &b[3],
            dims: &b[4],
            yaw: &b[5],
            dmap: &b[6],
        }
    }

    #[test]
    fn loss_gradient_matches_differences_for_fixed_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = LossWeights::default();
        for _ in 0..10 {
            let (mut bufs, t) = random_case(&mut rng, 6, 3);
            let a = match_targets(&view(&bufs, 6), &t, &MatchCosts::default());
            let (_, g) = image_loss(&view(&bufs, 6), &t, &a, &w, 0.25, 2.0);
            let grads = [&g.logits, &g.boxes, &g.center, &g.depth, &g.dims, &g.yaw, &g.dmap];
            for bi in 0..bufs.len() {
                for k in 0..bufs[bi].len() {
                    let h = 1e-7;
                    let orig = bufs[bi][k];
                    bufs[bi][k] = orig + h;
                    let up = image_loss(&view(&bufs, 6), &t, &a, &w, 0.25, 2.0).0.total();
                    bufs[bi][k] = orig - h;
                    let dn = image_loss(&view(&bufs, 6), &t, &a, &w, 0.25, 2.0).0.total();
                    bufs[bi][k] = orig;
                    let num = (up - dn) / (2.0 * h);
                    assert!((grads[bi][k] - num).abs() < 1e-4, "buffer {bi} index {k}: {} vs {num}", grads[bi][k]);
                }
            }
        }
    }

    #[test]
    fn perfect_predictions_have_zero_regression() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut b, t) = random_case(&mut rng, 5, 2);
        let nl = 4;
        for q in 0..5 {
            for k in 0..nl {
                b[0][q * nl + k] = if k == nl - 1 { 20.0 } else { -20.0 };
            }
        }
        for (gi, o) in t.objects.iter().enumerate() {
            let q = gi * 2;
            b[1][q * 4..q * 4 + 4].copy_from_slice(&o.box2d);
            b[2][q * 2..q * 2 + 2].copy_from_slice(&o.center);
            b[3][q] = o.depth;
            b[4][q * 3..q * 3 + 3].copy_from_slice(&o.dims);
            b[5][q * 2..q * 2 + 2].copy_from_slice(&orientation_target(o.alpha));
            for k in 0..nl {
                b[0][q * nl + k] = if k == o.class { 20.0 } else { -20.0 };
            }
        }
        for (i, z) in t.dmap.iter().enumerate() {
            if let Some(z) = z {
                b[6][i] = *z;
            }
        }
        let a = match_targets(&view(&b, 5), &t, &MatchCosts::default());
        assert_eq!(a, vec![0, 2]);
        let (terms, _) = image_loss(&view(&b, 5), &t, &a, &LossWeights::default(), 0.25, 2.0);
        assert!(terms.bbox.abs() < 1e-12 && terms.giou.abs() < 1e-12);
        assert!(terms.center3d == 0.0 && terms.depth == 0.0 && terms.dims == 0.0 && terms.dmap == 0.0);
        assert!(terms.yaw.abs() < 1e-12);
        assert!(terms.class < 1e-10);
    }

    #[test]
    fn weights_scale_terms_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b, t) = random_case(&mut rng, 6, 3);
        let a = match_targets(&view(&b, 6), &t, &MatchCosts::default());
        let w = LossWeights::default();
        let w2 = LossWeights { bbox: 10.0, ..w };
        let (x, _) = image_loss(&view(&b, 6), &t, &a, &w, 0.25, 2.0);
        let (y, _) = image_loss(&view(&b, 6), &t, &a, &w2, 0.25, 2.0);
        assert!((y.bbox - 2.0 * x.bbox).abs() < 1e-12);
        assert_eq!(y.giou, x.giou);
    }

    #[test]
    fn no_objects_gives_finite_classification_only_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (b, _) = random_case(&mut rng, 4, 0);
        let t = ImageTargets {
            objects: vec![],
            dmap: vec![None; 8],
        };
        let (terms, grads, _) = batch_loss(&[view(&b, 4)], &[t], &MatchCosts::default(), &LossWeights::default(), 0.25, 2.0);
        assert!(terms.total().is_finite() && terms.class > 0.0);
        assert_eq!(terms.l3d() + terms.bbox + terms.giou + terms.dmap, 0.0);
        assert!(grads[0].logits.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn loss_invariant_to_target_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let (b, t) = random_case(&mut rng, 8, 4);
            let mut r = t.clone();
            r.objects.reverse();
            r.objects.swap(0, 2);
            let c = MatchCosts::default();
            let w = LossWeights::default();
            let (x, gx, _) = batch_loss(&[view(&b, 8)], &[t], &c, &w, 0.25, 2.0);
            let (y, gy, _) = batch_loss(&[view(&b, 8)], &[r], &c, &w, 0.25, 2.0);
            assert!((x.total() - y.total()).abs() < 1e-9);
            for (p, q) in gx[0].boxes.iter().zip(&gy[0].boxes) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::seq::SliceRandom;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn loss_is_invariant_to_target_order(seed in any::<u64>(), ngt in 0usize..6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let (b, t) = random_case(&mut rng, 8, ngt);
                let mut r = t.clone();
                r.objects.shuffle(&mut rng);
                let (c, w) = (MatchCosts::default(), LossWeights::default());
                let (x, _, _) = batch_loss(&[view(&b, 8)], &[t], &c, &w, 0.25, 2.0);
                let (y, _, _) = batch_loss(&[view(&b, 8)], &[r], &c, &w, 0.25, 2.0);
                prop_assert!((x.total() - y.total()).abs() < 1e-9);
            }
        }
    }
}
