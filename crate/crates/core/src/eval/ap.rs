//! Greedy detection matching and 40-point interpolated average precision.

use crate::geometry::Box3D;
use crate::scalar::Scalar;

use super::iou::{bev_iou, iou3d};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IouMetric {
    Bev,
    ThreeD,
}

impl IouMetric {
    pub fn iou<T: Scalar>(self, a: &Box3D<T>, b: &Box3D<T>) -> T {
        match self {
            IouMetric::Bev => bev_iou(a, b),
            IouMetric::ThreeD => iou3d(a, b),
        }
    }
}

/// Projected-height thresholds for the synthetic difficulty buckets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DifficultyConfig {
    pub easy_min_height: f64,
    pub moderate_min_height: f64,
}

impl Default for DifficultyConfig {
    fn default() -> Self {
        Self {
            easy_min_height: 40.0,
            moderate_min_height: 25.0,
        }
    }
}

/// Tightest bucket a ground truth belongs to. Buckets nest: an easy object
/// also counts at moderate and hard.
pub fn bucket_difficulty(height_px: f64, fully_visible: bool, cfg: &DifficultyConfig) -> Difficulty {
    if height_px >= cfg.easy_min_height && fully_visible {
        Difficulty::Easy
    } else if height_px >= cfg.moderate_min_height {
        Difficulty::Moderate
    } else {
        Difficulty::Hard
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub box3d: Box3D<T>,
    pub difficulty: Difficulty,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredBox<T> {
    pub box3d: Box3D<T>,
    pub score: T,
}

/// One detection after matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchedRecord {
    pub score: f64,
    /// IoUs against the matched ground truth (0 when unmatched).
    pub iou3d: f64,
    pub ioubev: f64,
    pub is_tp: bool,
    pub difficulty: Option<Difficulty>,
}

#[derive(Clone, Debug, Default)]
pub struct ImageMatch {
    pub records: Vec<MatchedRecord>,
    /// Ground truths that count at the requested difficulty.
    pub num_gt: usize,
    /// Index of the detection that consumed each ground truth.
    pub gt_taken_by: Vec<Option<usize>>,
}

/// Greedy score-descending matching for one image.
///
/// A detection becomes a true positive on the unmatched, same-category ground
/// truth of highest IoU at or above `threshold` that counts at `difficulty`.
/// Detections landing on ground truths outside the difficulty are dropped
/// rather than counted as false positives.
pub fn match_image<T: Scalar>(
    preds: &[ScoredBox<T>],
    gts: &[GroundTruth<T>],
    metric: IouMetric,
    threshold: f64,
    difficulty: Difficulty,
) -> ImageMatch {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| {
        preds[b]
            .score
            .partial_cmp(&preds[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let counts = |g: &GroundTruth<T>| g.difficulty <= difficulty;
    let mut taken: Vec<Option<usize>> = vec![None; gts.len()];
    let mut records = Vec::with_capacity(preds.len());
    for &pi in &order {
        let p = &preds[pi];
        let mut best_valid: Option<(usize, f64)> = None;
        let mut best_ignored: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi].is_some() || g.box3d.category != p.box3d.category {
                continue;
            }
            let iou = metric.iou(&p.box3d, &g.box3d).to_f64c();
            if iou < threshold {
                continue;
            }
            let slot = if counts(g) { &mut best_valid } else { &mut best_ignored };
            if slot.is_none_or(|(_, b)| iou > b) {
                *slot = Some((gi, iou));
            }
        }
        let score = p.score.to_f64c();
        if let Some((gi, _)) = best_valid {
            debug_assert!(taken[gi].is_none());
            taken[gi] = Some(pi);
            let g = &gts[gi].box3d;
            records.push(MatchedRecord {
                score,
                iou3d: iou3d(&p.box3d, g).to_f64c(),
                ioubev: bev_iou(&p.box3d, g).to_f64c(),
                is_tp: true,
                difficulty: Some(gts[gi].difficulty),
            });
        } else if let Some((gi, _)) = best_ignored {
            taken[gi] = Some(pi);
        } else {
            records.push(MatchedRecord {
                score,
                iou3d: 0.0,
                ioubev: 0.0,
                is_tp: false,
                difficulty: None,
            });
        }
    }
    ImageMatch {
        records,
        num_gt: gts.iter().filter(|g| counts(g)).count(),
        gt_taken_by: taken,
    }
}

pub const RECALL_POINTS: usize = 40;

/// 40-point interpolated AP in percent; `None` when there are no ground truths.
pub fn average_precision(records: &[MatchedRecord], num_gt: usize) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut sorted: Vec<&MatchedRecord> = records.iter().collect();
    sorted.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(std::cmp::Ordering::Equal));
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(sorted.len());
    for (rank, r) in sorted.iter().enumerate() {
        if r.is_tp {
            tp += 1;
        }
        curve.push((tp as f64 / num_gt as f64, tp as f64 / (rank + 1) as f64));
    }
    // Running max of precision from the tail gives max precision at recall ≥ r.
    let mut best_tail = vec![0.0f64; curve.len() + 1];
    for i in (0..curve.len()).rev() {
        best_tail[i] = best_tail[i + 1].max(curve[i].1);
    }
    let mut sum = 0.0;
    let mut idx = 0;
    for k in 1..=RECALL_POINTS {
        let r = k as f64 / RECALL_POINTS as f64;
        while idx < curve.len() && curve[idx].0 < r - 1e-12 {
            idx += 1;
        }
        sum += best_tail[idx];
    }
    Some(100.0 * sum / RECALL_POINTS as f64)
}

/// AP3D and APBEV per difficulty; `None` entries mean no ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ApResult {
    pub ap3d: [Option<f64>; 3],
    pub apbev: [Option<f64>; 3],
    pub num_gt: [usize; 3],
    pub num_pred: usize,
}

impl ApResult {
    pub fn ap3d_at(&self, d: Difficulty) -> Option<f64> {
        self.ap3d[d as usize]
    }

    pub fn apbev_at(&self, d: Difficulty) -> Option<f64> {
        self.apbev[d as usize]
    }
}

/// Evaluates a set of images (predictions, ground truths) at one IoU threshold.
pub fn evaluate_images<T: Scalar>(images: &[(Vec<ScoredBox<T>>, Vec<GroundTruth<T>>)], threshold: f64) -> ApResult {
    let mut out = ApResult {
        num_pred: images.iter().map(|(p, _)| p.len()).sum(),
        ..Default::default()
    };
    for d in Difficulty::ALL {
        for (metric, slot) in [(IouMetric::ThreeD, &mut out.ap3d), (IouMetric::Bev, &mut out.apbev)] {
            let mut records = Vec::new();
            let mut n = 0;
            for (preds, gts) in images {
                let m = match_image(preds, gts, metric, threshold, d);
                records.extend(m.records);
                n += m.num_gt;
            }
            slot[d as usize] = average_precision(&records, n);
            out.num_gt[d as usize] = n;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(score: f64, tp: bool) -> MatchedRecord {
        MatchedRecord {
            score,
            iou3d: 0.0,
            ioubev: 0.0,
            is_tp: tp,
            difficulty: None,
        }
    }

    /// Brute force: precision envelope evaluated by scanning every rank.
    fn oracle_ap(records: &[(f64, bool)], num_gt: usize) -> f64 {
        let mut r = records.to_vec();
        r.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut pts = Vec::new();
        for cut in 1..=r.len() {
            let tp = r[..cut].iter().filter(|x| x.1).count() as f64;
            pts.push((tp / num_gt as f64, tp / cut as f64));
        }
        let mut total = 0.0;
        for k in 1..=40 {
            let target = k as f64 / 40.0;
            let mut best: f64 = 0.0;
            for &(rec, prec) in &pts {
                if rec >= target - 1e-12 {
                    best = best.max(prec);
                }
            }
            total += best;
        }
        100.0 * total / 40.0
    }

    #[test]
    fn ap_edge_cases() {
        let all: Vec<_> = (0..5).map(|i| rec(1.0 - i as f64 * 0.1, true)).collect();
        assert_eq!(average_precision(&all, 5), Some(100.0));
        assert_eq!(average_precision(&[], 3), Some(0.0));
        assert_eq!(average_precision(&all, 0), None);
    }

    #[test]
    fn ap_small_case_matches_enumeration() {
        let recs = [(0.9, true), (0.8, false), (0.7, true)];
        let got = average_precision(&recs.map(|(s, t)| rec(s, t)), 2).unwrap();
        // ranks: (R .5, P 1), (R .5, P .5), (R 1, P 2/3)
        let hand = 100.0 * (20.0 * 1.0 + 20.0 * (2.0 / 3.0)) / 40.0;
        assert!((got - hand).abs() < 1e-9);
        assert!((got - oracle_ap(&recs, 2)).abs() < 1e-9);
    }

    #[test]
    fn ap_matches_oracle_on_random_curves() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let n = rng.gen_range(0..15);
            let recs: Vec<(f64, bool)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen_bool(0.5))).collect();
            let tps = recs.iter().filter(|r| r.1).count();
            let num_gt = tps + rng.gen_range(1..4);
            let got = average_precision(&recs.iter().map(|&(s, t)| rec(s, t)).collect::<Vec<_>>(), num_gt).unwrap();
            assert!((got - oracle_ap(&recs, num_gt)).abs() < 1e-9);
        }
    }

    #[test]
    fn relabeling_fp_as_tp_never_lowers_ap() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.gen_range(1..12);
            let mut recs: Vec<MatchedRecord> = (0..n).map(|_| rec(rng.gen(), rng.gen_bool(0.5))).collect();
            let num_gt = n + 2;
            let before = average_precision(&recs, num_gt).unwrap();
            if let Some(fp) = recs.iter_mut().find(|r| !r.is_tp) {
                fp.is_tp = true;
            }
            let after = average_precision(&recs, num_gt).unwrap();
            assert!(after >= before - 1e-12);
        }
    }

    #[test]
    fn difficulty_buckets() {
        let cfg = DifficultyConfig::default();
        assert_eq!(bucket_difficulty(60.0, true, &cfg), Difficulty::Easy);
        assert_eq!(bucket_difficulty(60.0, false, &cfg), Difficulty::Moderate);
        assert_eq!(bucket_difficulty(30.0, true, &cfg), Difficulty::Moderate);
        assert_eq!(bucket_difficulty(10.0, false, &cfg), Difficulty::Hard);
    }

    fn gt(x: f64, d: Difficulty) -> GroundTruth<f64> {
        GroundTruth {
            box3d: Box3D::new([x, 0.0, 10.0], [2.0, 2.0, 2.0], 0.0, 0).unwrap(),
            difficulty: d,
        }
    }

    fn pred(x: f64, s: f64) -> ScoredBox<f64> {
        ScoredBox {
            box3d: Box3D::new([x, 0.0, 10.0], [2.0, 2.0, 2.0], 0.0, 0).unwrap(),
            score: s,
        }
    }

    #[test]
    fn greedy_matcher_consumes_each_gt_once() {
        let gts = vec![gt(0.0, Difficulty::Easy), gt(5.0, Difficulty::Easy)];
        let preds = vec![pred(0.1, 0.9), pred(0.0, 0.8), pred(5.0, 0.7), pred(20.0, 0.95)];
        let m = match_image(&preds, &gts, IouMetric::ThreeD, 0.5, Difficulty::Hard);
        assert_eq!(m.num_gt, 2);
        assert_eq!(m.records.iter().filter(|r| r.is_tp).count(), 2);
        // the higher-scored duplicate wins the first GT
        assert_eq!(m.gt_taken_by[0], Some(0));
        let mut owners: Vec<_> = m.gt_taken_by.iter().flatten().collect();
        owners.dedup();
        assert_eq!(owners.len(), 2);
    }

    #[test]
    fn detections_on_out_of_bucket_gts_are_ignored() {
        let gts = vec![gt(0.0, Difficulty::Hard)];
        let preds = vec![pred(0.0, 0.9)];
        let m = match_image(&preds, &gts, IouMetric::Bev, 0.5, Difficulty::Moderate);
        assert_eq!(m.num_gt, 0);
        assert!(m.records.is_empty());
        let res = evaluate_images(&[(preds, gts)], 0.5);
        assert_eq!(res.ap3d_at(Difficulty::Hard), Some(100.0));
        assert_eq!(res.ap3d_at(Difficulty::Easy), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn records() -> impl Strategy<Value = Vec<(f64, bool)>> {
            prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..15)
        }

        proptest! {
            #[test]
            fn ap_is_a_percentage_matching_the_oracle(recs in records(), extra in 0usize..4) {
                let num_gt = recs.iter().filter(|r| r.1).count() + extra;
                prop_assume!(num_gt > 0);
                let got = average_precision(&recs.iter().map(|&(s, t)| rec(s, t)).collect::<Vec<_>>(), num_gt).unwrap();
                prop_assert!((0.0..=100.0).contains(&got));
                prop_assert!((got - oracle_ap(&recs, num_gt)).abs() < 1e-9);
            }

            #[test]
            fn relabeling_a_false_positive_never_lowers_ap(recs in records(), pick in any::<prop::sample::Index>()) {
                let mut r: Vec<MatchedRecord> = recs.iter().map(|&(s, t)| rec(s, t)).collect();
                let num_gt = r.len() + 1;
                let fps: Vec<usize> = (0..r.len()).filter(|&i| !r[i].is_tp).collect();
                prop_assume!(!fps.is_empty());
                let before = average_precision(&r, num_gt).unwrap();
                r[fps[pick.index(fps.len())]].is_tp = true;
                prop_assert!(average_precision(&r, num_gt).unwrap() >= before - 1e-12);
            }

            #[test]
            fn greedy_matcher_never_reuses_a_ground_truth(
                gx in prop::collection::vec(-6.0f64..6.0, 0..6),
                px in prop::collection::vec((-6.0f64..6.0, 0.0f64..1.0), 0..10),
            ) {
                let gts: Vec<_> = gx.iter().map(|&x| gt(x, Difficulty::Easy)).collect();
                let preds: Vec<_> = px.iter().map(|&(x, s)| pred(x, s)).collect();
                let m = match_image(&preds, &gts, IouMetric::Bev, 0.3, Difficulty::Hard);
                let mut owners: Vec<usize> = m.gt_taken_by.iter().flatten().copied().collect();
                let n = owners.len();
                owners.sort();
                owners.dedup();
                prop_assert_eq!(owners.len(), n);
                prop_assert_eq!(m.records.iter().filter(|r| r.is_tp).count(), n);
                prop_assert!(n <= m.num_gt);
            }
        }
    }
}
