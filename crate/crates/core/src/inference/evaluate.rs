use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::detector::{predict_batch, Conditioning, DetectorState, FocalSample, IntrinsicSource};
use crate::encoder::IntrinsicEmbeddingBank;
use crate::error::{Error, Result};
use crate::eval::{bucket_difficulty, evaluate_images, ApResult, DifficultyConfig, GroundTruth, ScoredBox};
use crate::geometry::CameraIntrinsics;
use crate::scalar::Scalar;
use crate::scenegen::{Sample, Visibility};

use super::select::{select_embedding, InterpolationPolicy, Provenance};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    pub difficulty: DifficultyConfig,
    /// Image width the nominal focal and the difficulty heights refer to.
    pub reference_width: f64,
    pub score_threshold: f64,
    pub batch: usize,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            iou_threshold: 0.7,
            difficulty: DifficultyConfig::default(),
            reference_width: 1280.0,
            score_threshold: 0.0,
            batch: 8,
            workers: 1,
        }
    }
}

/// Per-image detector input derived from a focal.
#[derive(Clone, Debug, PartialEq)]
pub enum IntrinsicInput {
    None,
    Focal(f64),
    Embedding(Vec<f64>),
}

/// What the detector receives for a (possibly unseen) nominal focal.
pub fn intrinsic_input<T: Scalar>(
    state: &DetectorState<T>,
    bank: Option<&IntrinsicEmbeddingBank<f64>>,
    policy: &InterpolationPolicy,
    focal: f64,
) -> Result<(IntrinsicInput, Provenance)> {
    let cfg = &state.config;
    if !cfg.intrinsic_aware {
        return Ok((IntrinsicInput::None, Provenance::None));
    }
    match cfg.source {
        IntrinsicSource::LinearFocal => Ok((IntrinsicInput::Focal(focal), Provenance::Direct)),
        IntrinsicSource::Bank => {
            let bank = bank.ok_or_else(|| Error::Config("this detector needs an embedding bank".into()))?;
            let e = select_embedding(focal, bank, |v| state.adapt(v), policy)?;
            Ok((IntrinsicInput::Embedding(e.t_intr), e.provenance))
        }
    }
}

/// Ground truths of one sample with difficulty buckets on nominal heights.
pub fn ground_truths(sample: &Sample, opts: &EvalOptions) -> Vec<GroundTruth<f64>> {
    let scale = opts.reference_width / sample.intrinsics.width as f64;
    sample
        .labels
        .iter()
        .filter(|l| l.visibility != Visibility::OutOfFrame)
        .map(|l| GroundTruth {
            box3d: l.box3d,
            difficulty: bucket_difficulty(l.box2d.height() * scale, l.visibility == Visibility::Full, &opts.difficulty),
        })
        .collect()
}

/// One image to run: the sample, its detector input and decoding intrinsics.
struct Job<'a> {
    sample: &'a Sample,
    input: IntrinsicInput,
    k: CameraIntrinsics<f64>,
}

fn run_jobs<T: Scalar>(state: &DetectorState<T>, jobs: &[Job<'_>], opts: &EvalOptions) -> Result<Vec<Vec<ScoredBox<f64>>>> {
    let batch = opts.batch.max(1);
    let run_chunk = |chunk: &[Job<'_>]| -> Result<Vec<Vec<ScoredBox<f64>>>> {
        let mut out = Vec::with_capacity(chunk.len());
        for part in chunk.chunks(batch) {
            let focals: Vec<f64>;
            let rows: Vec<Vec<f64>>;
            let cond = match &part[0].input {
                IntrinsicInput::None => Conditioning::None,
                IntrinsicInput::Focal(_) => {
                    focals = part
                        .iter()
                        .map(|j| match j.input {
                            IntrinsicInput::Focal(f) => f,
                            _ => unreachable!("jobs share one input kind"),
                        })
                        .collect();
                    Conditioning::Focal(&focals)
                }
                IntrinsicInput::Embedding(_) => {
                    rows = part
                        .iter()
                        .map(|j| match &j.input {
                            IntrinsicInput::Embedding(v) => v.clone(),
                            _ => unreachable!("jobs share one input kind"),
                        })
                        .collect();
                    Conditioning::Intrinsic(&rows)
                }
            };
            let items: Vec<_> = part.iter().map(|j| (&j.sample.image, &j.k)).collect();
            for set in predict_batch(state, &items, cond)? {
                out.push(
                    set.filtered(opts.score_threshold)
                        .into_iter()
                        .map(|d| ScoredBox {
                            box3d: d.box3d,
                            score: d.score,
                        })
                        .collect(),
                );
            }
        }
        Ok(out)
    };
    let workers = opts.workers.max(1).min(jobs.len().max(1));
    if workers == 1 {
        return run_chunk(jobs);
    }
    let per = jobs.len().div_ceil(workers);
    let results: Vec<Result<Vec<Vec<ScoredBox<f64>>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = jobs.chunks(per).map(|c| s.spawn(move || run_chunk(c))).collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(jobs.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn with_focal(k: &CameraIntrinsics<f64>, scale: f64) -> CameraIntrinsics<f64> {
    CameraIntrinsics {
        fx: k.fx * scale,
        fy: k.fy * scale,
        ..*k
    }
}

/// AP over `samples` when the detector is told each sample's focal is
/// `focal + delta` (and decodes with the matching intrinsics).
pub fn evaluate_samples<T: Scalar>(
    state: &DetectorState<T>,
    bank: Option<&IntrinsicEmbeddingBank<f64>>,
    policy: &InterpolationPolicy,
    samples: &[FocalSample<'_>],
    delta: f64,
    opts: &EvalOptions,
) -> Result<(ApResult, Vec<Provenance>)> {
    let mut jobs = Vec::with_capacity(samples.len());
    let mut provs = Vec::with_capacity(samples.len());
    for s in samples {
        let f_in = s.focal + delta;
        let (input, prov) = intrinsic_input(state, bank, policy, f_in)?;
        provs.push(prov);
        jobs.push(Job {
            sample: s.sample,
            input,
            k: with_focal(&s.sample.intrinsics, f_in / s.focal),
        });
    }
    let preds = run_jobs(state, &jobs, opts)?;
    let images: Vec<_> = preds
        .into_iter()
        .zip(samples)
        .map(|(p, s)| (p, ground_truths(s.sample, opts)))
        .collect();
    Ok((evaluate_images(&images, opts.iou_threshold), provs))
}

/// One row of a per-focal table.
#[derive(Clone, Debug, PartialEq)]
pub struct FocalRow {
    pub focal: f64,
    pub provenance: String,
    pub ap: ApResult,
}

/// AP per grid focal over the samples rendered at that focal.
pub fn evaluate_over_focals<T: Scalar>(
    state: &DetectorState<T>,
    bank: Option<&IntrinsicEmbeddingBank<f64>>,
    policy: &InterpolationPolicy,
    grid: &[f64],
    samples: &[FocalSample<'_>],
    opts: &EvalOptions,
) -> Result<Vec<FocalRow>> {
    let mut rows = Vec::new();
    for &f in grid {
        let subset: Vec<FocalSample<'_>> = samples.iter().filter(|s| s.focal == f).copied().collect();
        if subset.is_empty() {
            warn!("no samples at focal {f}, skipping");
            continue;
        }
        let (ap, provs) = evaluate_samples(state, bank, policy, &subset, 0.0, opts)?;
        rows.push(FocalRow {
            focal: f,
            provenance: provs[0].label().to_string(),
            ap,
        });
    }
    Ok(rows)
}

/// AP under focal perturbations.
#[derive(Clone, Debug, PartialEq)]
pub struct MismatchRow {
    pub delta: f64,
    /// Mean of the `+delta` and `-delta` runs (the plain run at 0).
    pub ap: ApResult,
}

fn mean_option(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some((a? + b?) / 2.0)
}

/// Field-wise mean of two results on the same ground truths.
pub fn average_results(a: &ApResult, b: &ApResult) -> ApResult {
    ApResult {
        ap3d: std::array::from_fn(|i| mean_option(a.ap3d[i], b.ap3d[i])),
        apbev: std::array::from_fn(|i| mean_option(a.apbev[i], b.apbev[i])),
        num_gt: a.num_gt,
        num_pred: (a.num_pred + b.num_pred) / 2,
    }
}

/// AP at each `delta`, each the mean of the `+delta` and `-delta` runs.
pub fn mismatch_sweep<T: Scalar>(
    state: &DetectorState<T>,
    bank: Option<&IntrinsicEmbeddingBank<f64>>,
    policy: &InterpolationPolicy,
    samples: &[FocalSample<'_>],
    deltas: &[f64],
    opts: &EvalOptions,
) -> Result<Vec<MismatchRow>> {
    deltas
        .iter()
        .map(|&d| {
            let ap = if d == 0.0 {
                evaluate_samples(state, bank, policy, samples, 0.0, opts)?.0
            } else {
                let (plus, _) = evaluate_samples(state, bank, policy, samples, d, opts)?;
                let (minus, _) = evaluate_samples(state, bank, policy, samples, -d, opts)?;
                average_results(&plus, &minus)
            };
            Ok(MismatchRow { delta: d, ap })
        })
        .collect()
}

pub const RESULT_COLUMNS: [&str; 6] = ["ap3d_easy", "ap3d_mod", "ap3d_hard", "apbev_easy", "apbev_mod", "apbev_hard"];

/// Value written for an AP with no ground truth.
pub const NOT_APPLICABLE: &str = "NA";

fn fmt_ap(v: Option<f64>) -> String {
    v.map_or_else(|| NOT_APPLICABLE.to_string(), |x| format!("{x:.4}"))
}

fn ap_fields(ap: &ApResult) -> String {
    ap.ap3d
        .iter()
        .chain(&ap.apbev)
        .map(|v| fmt_ap(*v))
        .collect::<Vec<_>>()
        .join(",")
}

/// `focal,provenance,ap3d_easy,...` table.
pub fn focal_rows_csv(rows: &[FocalRow]) -> String {
    let mut s = format!("focal,provenance,{}\n", RESULT_COLUMNS.join(","));
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.focal, r.provenance, ap_fields(&r.ap));
    }
    s
}

/// Same columns keyed by perturbation; provenance reads `mismatch`.
pub fn mismatch_rows_csv(rows: &[MismatchRow]) -> String {
    let mut s = format!("delta,provenance,{}\n", RESULT_COLUMNS.join(","));
    for r in rows {
        let _ = writeln!(s, "{},mismatch,{}", r.delta, ap_fields(&r.ap));
    }
    s
}

/// Parses a results table back into `(key, provenance, ApResult)` rows.
pub fn parse_results_csv(path: &Path, text: &str) -> Result<Vec<(f64, String, ApResult)>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse(path, "empty results file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() != 8 || cols[1] != "provenance" || cols[2..] != RESULT_COLUMNS {
        return Err(Error::parse(path, format!("unexpected header '{header}'")));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::parse(path, format!("line {}: expected 8 fields", n + 2)));
        }
        let key: f64 = f[0]
            .parse()
            .map_err(|_| Error::parse(path, format!("line {}: bad key '{}'", n + 2, f[0])))?;
        let mut vals = [None; 6];
        for (i, v) in f[2..].iter().enumerate() {
            vals[i] = if *v == NOT_APPLICABLE {
                None
            } else {
                let x: f64 = v
                    .parse()
                    .map_err(|_| Error::parse(path, format!("line {}: bad value '{v}'", n + 2)))?;
                if !(0.0..=100.0).contains(&x) {
                    return Err(Error::parse(path, format!("line {}: AP {x} outside [0, 100]", n + 2)));
                }
                Some(x)
            };
        }
        out.push((
            key,
            f[1].to_string(),
            ApResult {
                ap3d: [vals[0], vals[1], vals[2]],
                apbev: [vals[3], vals[4], vals[5]],
                ..Default::default()
            },
        ));
    }
    Ok(out)
}
