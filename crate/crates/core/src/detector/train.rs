use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::IntrinsicEmbeddingBank;
use crate::error::{Error, Result};
use crate::geometry::{Box2D, Box3D, CameraIntrinsics};
use crate::nn::{AdamW, Graph, StepSchedule, Var};
use crate::scalar::Scalar;
use crate::scenegen::{Sample, Visibility};

use super::config::IntrinsicSource;
use super::loss::{batch_loss, orientation_angle, sigmoid, ImageTargets, LossTerms, Target};
use super::model::{BatchOutputs, Conditioning, DetectorState, ForwardOut};

/// Training targets for one sample: every in-frame object, plus the depth of
/// the nearest object covering each stride-32 cell center.
pub fn targets_for(sample: &Sample, dmap_grid: (usize, usize)) -> ImageTargets {
    let k = &sample.intrinsics;
    let (w, h) = (k.width as f64, k.height as f64);
    let visible: Vec<_> = sample.labels.iter().filter(|l| l.visibility != Visibility::OutOfFrame).collect();
    let objects = visible
        .iter()
        .map(|l| {
            let b = &l.box2d;
            let c = l.box3d.center;
            let uv = k.project(c).unwrap_or([k.cx, k.cy]);
            Target {
                class: l.box3d.category as usize,
                box2d: [
                    (b.xmin + b.xmax) / (2.0 * w),
                    (b.ymin + b.ymax) / (2.0 * h),
                    b.width() / w,
                    b.height() / h,
                ],
                center: [uv[0] / w, uv[1] / h],
                depth: c[2],
                dims: l.box3d.dims,
                alpha: l.box3d.yaw - c[0].atan2(c[2]),
            }
        })
        .collect();
    let (rows, cols) = dmap_grid;
    let mut dmap = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let x = (c as f64 + 0.5) * w / cols as f64;
            let y = (r as f64 + 0.5) * h / rows as f64;
            let z = visible
                .iter()
                .filter(|l| x >= l.box2d.xmin && x <= l.box2d.xmax && y >= l.box2d.ymin && y <= l.box2d.ymax)
                .map(|l| l.box3d.center[2])
                .fold(None, |acc: Option<f64>, z| Some(acc.map_or(z, |a| a.min(z))));
            dmap.push(z);
        }
    }
    ImageTargets { objects, dmap }
}

/// Builds the loss node for a batch. The returned scalar's gradient reaches
/// every parameter through the forward outputs.
pub fn batch_objective<T: Scalar>(
    state: &DetectorState<T>,
    g: &mut Graph<T>,
    images: &[&crate::image::Image<f32>],
    cond: Conditioning<'_>,
    targets: &[ImageTargets],
) -> Result<(Var, ForwardOut, LossTerms)> {
    let out = state.forward(g, images, cond)?;
    let (mut loss, mut terms) = layer_objective(g, state, &out, out.vars(), targets, 7);
    if !out.aux.is_empty() {
        let plain: Vec<ImageTargets> = targets
            .iter()
            .map(|t| ImageTargets {
                objects: t.objects.clone(),
                dmap: Vec::new(),
            })
            .collect();
        for a in &out.aux {
            let vars = [a[0], a[1], a[2], a[3], a[4], a[5], out.dmap];
            let (l, t) = layer_objective(g, state, &out, vars, &plain, 6);
            loss = g.add(loss, l);
            terms.add(&t);
        }
    }
    Ok((loss, out, terms))
}

/// Loss node over the first `n_inputs` of `vars` (the depth map is the last).
fn layer_objective<T: Scalar>(
    g: &mut Graph<T>,
    state: &DetectorState<T>,
    out: &ForwardOut,
    vars: [Var; 7],
    targets: &[ImageTargets],
    n_inputs: usize,
) -> (Var, LossTerms) {
    let cfg = &state.config;
    let values = BatchOutputs::from_vars(g, out.batch, cfg.n_queries, vars);
    let views: Vec<_> = (0..out.batch).map(|i| values.view(i)).collect();
    let (terms, grads, _) = batch_loss(&views, targets, &cfg.costs, &cfg.weights, cfg.focal_alpha, cfg.focal_gamma);
    let field = |k: usize| -> Vec<T> {
        grads
            .iter()
            .flat_map(|gr| {
                let s = match k {
                    0 => &gr.logits,
                    1 => &gr.boxes,
                    2 => &gr.center,
                    3 => &gr.depth,
                    4 => &gr.dims,
                    5 => &gr.yaw,
                    _ => &gr.dmap,
                };
                s.iter().map(|v| T::c(*v))
            })
            .collect()
    };
    let loss = g.external(&vars[..n_inputs], T::c(terms.total()), (0..n_inputs).map(field).collect());
    (loss, terms)
}

/// Maps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

/// One decoded query.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub query: usize,
    /// Sigmoid score per category, background last.
    pub scores: Vec<f64>,
    pub category: u32,
    pub score: f64,
    pub box2d: Box2D<f64>,
    /// Projected 3D center in pixels.
    pub center_uv: [f64; 2],
    pub depth: f64,
    pub box3d: Box3D<f64>,
}

/// Every query of one image, decoded.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    /// Decodes the raw head outputs of image `i` through `k`.
    pub fn decode(out: &BatchOutputs, i: usize, k: &CameraIntrinsics<f64>) -> Result<Self> {
        let v = out.view(i);
        let nl = v.n_logits();
        let (w, h) = (k.width as f64, k.height as f64);
        let mut detections = Vec::with_capacity(v.n_queries);
        for q in 0..v.n_queries {
            let scores: Vec<f64> = v.logits[q * nl..(q + 1) * nl]
                .iter()
                .map(|&x| sigmoid(x).min(1.0 - f64::EPSILON))
                .collect();
            let (category, score) = scores[..nl - 1]
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &s)| if s > best.1 { (c, s) } else { best });
            let b = &v.boxes[q * 4..q * 4 + 4];
            let box2d = Box2D {
                xmin: (b[0] - b[2] / 2.0) * w,
                ymin: (b[1] - b[3] / 2.0) * h,
                xmax: (b[0] + b[2] / 2.0) * w,
                ymax: (b[1] + b[3] / 2.0) * h,
            };
            let uv = [v.center[q * 2] * w, v.center[q * 2 + 1] * h];
            let depth = v.depth[q];
            let dims = [v.dims[q * 3], v.dims[q * 3 + 1], v.dims[q * 3 + 2]];
            let alpha = orientation_angle(v.yaw[q * 2], v.yaw[q * 2 + 1]);
            let yaw = wrap_angle(alpha + (uv[0] - k.cx).atan2(k.fx));
            let box3d = Box3D::new(k.back_project(uv, depth), dims, yaw, category as u32)?;
            detections.push(Detection {
                query: q,
                scores,
                category: category as u32,
                score,
                box2d,
                center_uv: uv,
                depth,
                box3d,
            });
        }
        Ok(Self { detections })
    }

    /// Detections whose best non-background score reaches `threshold`.
    pub fn filtered(self, threshold: f64) -> Vec<Detection> {
        self.detections.into_iter().filter(|d| d.score >= threshold).collect()
    }
}

/// Runs the detector on a batch and decodes each image through its intrinsics.
pub fn predict_batch<T: Scalar>(
    state: &DetectorState<T>,
    samples: &[(&crate::image::Image<f32>, &CameraIntrinsics<f64>)],
    cond: Conditioning<'_>,
) -> Result<Vec<DetectionSet>> {
    let mut g = Graph::new();
    let images: Vec<_> = samples.iter().map(|s| s.0).collect();
    let out = state.forward(&mut g, &images, cond)?;
    let values = BatchOutputs::collect(&g, &out, state.config.n_queries);
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| DetectionSet::decode(&values, i, s.1))
        .collect()
}

/// Filtered detections for one image.
pub fn predict<T: Scalar>(
    state: &DetectorState<T>,
    sample: &Sample,
    cond: Conditioning<'_>,
    threshold: f64,
) -> Result<Vec<Detection>> {
    let mut sets = predict_batch(state, &[(&sample.image, &sample.intrinsics)], cond)?;
    Ok(sets.pop().unwrap().filtered(threshold))
}

/// A sample and the nominal focal it was rendered at.
#[derive(Clone, Copy, Debug)]
pub struct FocalSample<'a> {
    pub focal: f64,
    pub sample: &'a Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many steps; 0 means run every epoch.
    pub max_steps: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            seed: 0,
            max_steps: 0,
        }
    }
}

/// One metrics-log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub l2d: f64,
    pub l3d: f64,
    pub ldmap: f64,
    pub lr: f64,
}

impl std::fmt::Display for StepMetrics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {:.6} {:.6} {:.6} {:.6} {:e}", self.step, self.loss, self.l2d, self.l3d, self.ldmap, self.lr)
    }
}

pub const METRICS_HEADER: &str = "step loss l2d l3d ldmap lr";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub metrics: Vec<StepMetrics>,
    /// Number of bank vectors read.
    pub bank_lookups: usize,
}

impl TrainReport {
    pub fn log_text(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for m in &self.metrics {
            s.push_str(&m.to_string());
            s.push('\n');
        }
        s
    }
}

/// Trains `state` in place. Each epoch visits every example once in a
/// seeded random order.
pub fn train<T: Scalar>(
    state: &mut DetectorState<T>,
    examples: &[FocalSample<'_>],
    bank: Option<&IntrinsicEmbeddingBank<f64>>,
    tc: &TrainConfig,
) -> Result<TrainReport> {
    let cfg = state.config.clone();
    let reads_bank = cfg.intrinsic_aware && cfg.source == IntrinsicSource::Bank;
    if reads_bank {
        let bank = bank.ok_or_else(|| Error::Config("training this detector requires a bank".into()))?;
        if bank.dim() != cfg.bank_dim {
            return Err(Error::Config(format!(
                "bank width {} does not match detector bank_dim {}",
                bank.dim(),
                cfg.bank_dim
            )));
        }
        for e in examples {
            if bank.get(e.focal).is_none() {
                return Err(Error::Config(format!("focal {} is not in the bank", e.focal)));
            }
        }
    }
    let grid = state.dmap_grid();
    let targets: Vec<ImageTargets> = examples.iter().map(|e| targets_for(e.sample, grid)).collect();
    let schedule = StepSchedule::scaled(cfg.lr, cfg.decay_rate, &cfg.decay_epochs, cfg.reference_epochs, tc.epochs);
    let mut opt = AdamW::new(&state.params, cfg.weight_decay);
    let no_decay = state.no_decay_mask();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    'epochs: for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr_at(epoch);
        for chunk in order.chunks(cfg.batch_size) {
            if tc.max_steps > 0 && state.step >= tc.max_steps {
                break 'epochs;
            }
            let images: Vec<_> = chunk.iter().map(|&i| &examples[i].sample.image).collect();
            let batch_targets: Vec<ImageTargets> = chunk.iter().map(|&i| targets[i].clone()).collect();
            let focals: Vec<f64> = chunk.iter().map(|&i| examples[i].focal).collect();
            let bank_rows: Vec<Vec<f64>>;
            let cond = if !cfg.intrinsic_aware {
                Conditioning::None
            } else if reads_bank {
                let bank = bank.unwrap();
                bank_rows = focals.iter().map(|f| bank.get(*f).unwrap().to_vec()).collect();
                report.bank_lookups += bank_rows.len();
                Conditioning::Bank(&bank_rows)
            } else {
                Conditioning::Focal(&focals)
            };
            let mut g = Graph::new();
            let (loss, _, terms) = batch_objective(state, &mut g, &images, cond, &batch_targets)?;
            let step = state.step + 1;
            if !terms.total().is_finite() {
                return Err(Error::Numeric {
                    step,
                    msg: "non-finite loss".into(),
                });
            }
            let grads = g.backward(loss);
            let mut pg = g.param_grads(&grads, &state.params);
            if cfg.grad_clip > 0.0 {
                clip_global_norm(&mut pg, cfg.grad_clip);
            }
            opt.step(&mut state.params, &pg, lr, &no_decay);
            state.step = step;
            if !state.params.all_finite() {
                return Err(Error::Numeric {
                    step,
                    msg: "non-finite parameters after update".into(),
                });
            }
            let m = StepMetrics {
                step,
                loss: terms.total(),
                l2d: terms.l2d(),
                l3d: terms.l3d(),
                ldmap: terms.dmap,
                lr,
            };
            debug!("{m}");
            report.metrics.push(m);
        }
        if let Some(m) = report.metrics.last() {
            info!("epoch {} done, step {} loss {:.4}", epoch + 1, m.step, m.loss);
        }
    }
    Ok(report)
}

fn clip_global_norm<T: Scalar>(grads: &mut [Option<Vec<T>>], max_norm: f64) {
    let total: f64 = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|v| {
            let x = v.to_f64c();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let s = T::c(max_norm / total);
        grads.iter_mut().flatten().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
    }
}
