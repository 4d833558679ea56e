use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;
use crate::geometry::CameraIntrinsics;
use crate::image::Image;
use crate::nn::{check_gradients, Graph};
use crate::scenegen::{build_dataset, DatasetConfig, Sample, SceneConfig};

fn micro_config() -> DetectorConfig {
    DetectorConfig {
        width: 32,
        height: 16,
        channels: vec![2, 3, 3, 3, 4],
        stub_scales: true,
        d_model: 8,
        n_queries: 2,
        n_decoder_layers: 1,
        n_heads: 1,
        ffn_dim: 8,
        bank_dim: 8,
        batch_size: 2,
        ..Default::default()
    }
}

fn random_image(w: usize, h: usize, seed: u64) -> Image<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * 3).map(|_| rng.gen::<f32>()).collect();
    Image::from_vec(h, w, 3, data).unwrap()
}

fn micro_samples(n: usize, seed: u64) -> Vec<(f64, Sample)> {
    let cfg = DatasetConfig {
        width: 32,
        height: 16,
        exact_renders: false,
        scene: SceneConfig {
            max_boxes: 3,
            z_range: (4.0, 20.0),
            ..Default::default()
        },
        ..Default::default()
    };
    build_dataset(seed, n, &[900.0, 1100.0], (1.0, 0.0, 0.0), &cfg, 1)
        .unwrap()
        .records
        .into_iter()
        .map(|r| (r.focal, r.sample))
        .collect()
}

fn output_values(st: &DetectorState<f64>, images: &[&Image<f32>], cond: Conditioning<'_>) -> (Vec<Vec<f64>>, ForwardTrace) {
    let mut g = Graph::new();
    let out = st.forward(&mut g, images, cond).unwrap();
    (out.vars().iter().map(|v| g.value(*v).to_vec()).collect(), out.trace)
}

#[test]
fn output_shapes_follow_query_count_and_heads() {
    let cfg = DetectorConfig {
        d_model: 16,
        n_heads: 4,
        ffn_dim: 16,
        channels: vec![4, 4, 4, 4, 4],
        ..Default::default()
    };
    let mut base = cfg.clone();
    Ablation::Baseline.apply(&mut base);
    let st = DetectorState::<f32>::new(base, 0).unwrap();
    let img = random_image(256, 128, 1);
    let mut g = Graph::new();
    let out = st.forward(&mut g, &[&img, &img], Conditioning::None).unwrap();
    assert_eq!(g.shape(out.logits), &[2, 50, 4]);
    assert_eq!(g.shape(out.boxes), &[2, 50, 4]);
    assert_eq!(g.shape(out.center), &[2, 50, 2]);
    assert_eq!(g.shape(out.depth), &[2, 50, 1]);
    assert_eq!(g.shape(out.dims), &[2, 50, 3]);
    assert_eq!(g.shape(out.yaw), &[2, 50, 2]);
    assert_eq!(g.shape(out.dmap), &[2, 1, 4, 8]);
    assert_eq!(st.dmap_grid(), (4, 8));
    assert!(out.t_intr.is_none());
}

#[test]
fn resolution_mismatch_and_wrong_conditioning_are_config_errors() {
    let st = DetectorState::<f64>::new(micro_config(), 0).unwrap();
    let mut g = Graph::new();
    let wrong = random_image(16, 16, 0);
    assert!(matches!(st.forward(&mut g, &[&wrong], Conditioning::Intrinsic(&[vec![0.0; 8]])), Err(Error::Config(_))));
    let img = random_image(32, 16, 0);
    assert!(matches!(st.forward(&mut g, &[&img], Conditioning::None), Err(Error::Config(_))));
    assert!(matches!(st.forward(&mut g, &[&img], Conditioning::Focal(&[900.0])), Err(Error::Config(_))));
    let mut base = micro_config();
    Ablation::Baseline.apply(&mut base);
    let b = DetectorState::<f64>::new(base, 0).unwrap();
    assert!(matches!(b.forward(&mut g, &[&img], Conditioning::Bank(&[vec![0.0; 8]])), Err(Error::Config(_))));
}

#[test]
fn forward_is_deterministic() {
    let mut st = DetectorState::<f64>::new(micro_config(), 3).unwrap();
    st.perturb(0.1, 4);
    let img = random_image(32, 16, 2);
    let rows = [vec![0.3; 8]];
    let a = output_values(&st, &[&img], Conditioning::Bank(&rows));
    let b = output_values(&st, &[&img], Conditioning::Bank(&rows));
    assert_eq!(a, b);
}

#[test]
fn zero_embedding_reproduces_baseline_bitwise() {
    for seed in 0..3 {
        let cfg = DetectorConfig {
            stub_scales: false,
            n_heads: 2,
            ..micro_config()
        };
        let full = DetectorState::<f64>::new(cfg.clone(), seed).unwrap();
        let mut bcfg = cfg;
        Ablation::Baseline.apply(&mut bcfg);
        let base = DetectorState::<f64>::new(bcfg, seed).unwrap();
        let img = random_image(32, 16, seed + 10);
        let zero = [vec![0.0; 8]];
        let (a, ta) = output_values(&full, &[&img], Conditioning::Intrinsic(&zero));
        let (b, tb) = output_values(&base, &[&img], Conditioning::None);
        assert_eq!(a, b);
        assert!(ta.feature_fusion && ta.query_fusion && !ta.bank_read);
        assert_eq!(tb, ForwardTrace::default());
        let (c, _) = output_values(&full, &[&img], Conditioning::Intrinsic(&[vec![0.5; 8]]));
        assert_ne!(a, c);
    }
}

#[test]
fn each_ablation_toggles_its_own_path() {
    let img = random_image(32, 16, 5);
    let bank_row = [vec![0.2; 8]];
    let focal = [900.0];
    for ab in Ablation::ALL {
        let mut cfg = micro_config();
        ab.apply(&mut cfg);
        let st = DetectorState::<f64>::new(cfg, 1).unwrap();
        let cond = match ab {
            Ablation::Baseline => Conditioning::None,
            Ablation::NoEncoder => Conditioning::Focal(&focal),
            _ => Conditioning::Bank(&bank_row),
        };
        let (_, t) = output_values(&st, &[&img], cond);
        let expected = ForwardTrace {
            bank_read: !matches!(ab, Ablation::Baseline | Ablation::NoEncoder),
            focal_encoder: ab == Ablation::NoEncoder,
            connector_mlp: !matches!(ab, Ablation::Baseline | Ablation::NoConnector),
            connector_linear: ab == Ablation::NoConnector,
            feature_fusion: !matches!(ab, Ablation::Baseline | Ablation::NoFeatFuse),
            query_fusion: !matches!(ab, Ablation::Baseline | Ablation::NoQueryFuse),
        };
        assert_eq!(t, expected, "{ab}");
        let has_connector = st.params.find("connector.w1").is_some();
        assert_eq!(has_connector, expected.connector_mlp, "{ab}");
    }
}

#[test]
fn shared_weights_do_not_depend_on_intrinsic_parameters() {
    let full = DetectorState::<f64>::new(micro_config(), 9).unwrap();
    let mut b = micro_config();
    Ablation::Baseline.apply(&mut b);
    let base = DetectorState::<f64>::new(b, 9).unwrap();
    for id in base.params.ids() {
        let other = full.params.find(base.params.name(id)).unwrap();
        assert_eq!(base.params.value(id), full.params.value(other));
    }
}

#[test]
fn end_to_end_gradients_match_central_differences() {
    let samples = micro_samples(3, 7);
    let picked: Vec<&(f64, Sample)> = samples.iter().filter(|(_, s)| !s.labels.is_empty()).take(2).collect();
    assert_eq!(picked.len(), 2);
    for ab in [Ablation::Full, Ablation::NoEncoder, Ablation::NoConnector] {
        let mut cfg = micro_config();
        ab.apply(&mut cfg);
        let mut st = DetectorState::<f64>::new(cfg, 2).unwrap();
        st.perturb(0.05, 11);
        let grid = st.dmap_grid();
        let targets: Vec<_> = picked.iter().map(|(_, s)| targets_for(s, grid)).collect();
        let images: Vec<_> = picked.iter().map(|(_, s)| &s.image).collect();
        let rows: Vec<Vec<f64>> = (0..2).map(|i| (0..8).map(|k| ((i * 8 + k) as f64 * 0.37).sin()).collect()).collect();
        let focals: Vec<f64> = picked.iter().map(|(f, _)| *f).collect();
        let checks = check_gradients(&st.params, 1e-6, |g, p| {
            let mut s = st.clone();
            s.params = p.clone();
            let cond = if ab == Ablation::NoEncoder {
                Conditioning::Focal(&focals)
            } else {
                Conditioning::Bank(&rows)
            };
            batch_objective(&s, g, &images, cond, &targets).unwrap().0
        });
        assert_eq!(checks.len(), st.params.len());
        for c in &checks {
            // Key biases cancel in the softmax; their gradient is zero up to rounding.
            let vanishing = c.analytic_norm < 1e-12 && c.abs_error < 1e-7;
            assert!(c.rel_error < 1e-3 || vanishing, "{ab} {}: rel error {:e} (norm {:e})", c.name, c.rel_error, c.analytic_norm);
        }
        let nonzero = checks.iter().filter(|c| c.analytic_norm > 0.0).count();
        assert!(nonzero * 10 >= checks.len() * 9, "{ab}: only {nonzero} of {} parameters get gradient", checks.len());
    }
}

#[test]
fn predict_thresholds_and_decoding() {
    let samples = micro_samples(2, 3);
    let (_, sample) = &samples[0];
    let cfg = DetectorConfig {
        n_queries: 50,
        ..micro_config()
    };
    let mut st = DetectorState::<f64>::new(cfg, 0).unwrap();
    st.perturb(0.2, 1);
    let row = [vec![0.1; 8]];
    assert!(predict(&st, sample, Conditioning::Bank(&row), 1.0).unwrap().is_empty());
    let all = predict(&st, sample, Conditioning::Bank(&row), 0.0).unwrap();
    assert_eq!(all.len(), 50);
    let k: &CameraIntrinsics<f64> = &sample.intrinsics;
    for d in &all {
        let uv = k.project(d.box3d.center).unwrap();
        assert!((uv[0] - d.center_uv[0]).abs() < 1e-6 && (uv[1] - d.center_uv[1]).abs() < 1e-6);
        assert!(d.depth > 0.0 && d.box3d.dims.iter().all(|x| *x > 0.0));
        assert!(d.scores.iter().all(|s| (0.0..1.0).contains(s)));
        let c = d.box3d.center;
        let alpha = loss::orientation_angle(
            loss::orientation_target(d.box3d.yaw - c[0].atan2(c[2]))[0],
            loss::orientation_target(d.box3d.yaw - c[0].atan2(c[2]))[1],
        );
        let q = d.query;
        let mut g = Graph::new();
        let out = st.forward(&mut g, &[&sample.image], Conditioning::Bank(&row)).unwrap();
        let y = &g.value(out.yaw)[q * 2..q * 2 + 2];
        assert!((alpha - loss::orientation_angle(y[0], y[1])).abs() < 1e-9);
    }
}

#[test]
fn angles_wrap_and_orientation_ignores_half_turns() {
    use std::f64::consts::PI;
    for a in [-3.0, -1.0, 0.0, 0.4, 1.5, 3.1] {
        let t = loss::orientation_target(a);
        let u = loss::orientation_target(a + PI);
        assert!((t[0] - u[0]).abs() < 1e-12 && (t[1] - u[1]).abs() < 1e-12);
        let back = loss::orientation_angle(t[0], t[1]);
        assert!(((back - a) / PI - ((back - a) / PI).round()).abs() < 1e-12);
    }
    assert_eq!(train::wrap_angle(PI), PI);
    assert_eq!(train::wrap_angle(-PI), PI);
    assert!((train::wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
}

#[test]
fn depth_targets_cover_object_cells() {
    let samples = micro_samples(6, 21);
    for (_, s) in &samples {
        let t = targets_for(s, (1, 1));
        assert_eq!(t.dmap.len(), 1);
        let covering: Vec<f64> = s
            .labels
            .iter()
            .filter(|l| l.visibility != crate::scenegen::Visibility::OutOfFrame)
            .filter(|l| l.box2d.xmin <= 16.0 && l.box2d.xmax >= 16.0 && l.box2d.ymin <= 8.0 && l.box2d.ymax >= 8.0)
            .map(|l| l.box3d.center[2])
            .collect();
        let expected = covering.iter().copied().reduce(f64::min);
        assert_eq!(t.dmap[0], expected);
        for o in &t.objects {
            assert!(o.box2d[2] > 0.0 && o.box2d[3] > 0.0 && o.depth > 0.0);
        }
    }
}

#[test]
fn checkpoint_round_trip_and_hash_check() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut st = DetectorState::<f32>::new(micro_config(), 4).unwrap();
    st.perturb(0.3, 2);
    st.step = 17;
    write_checkpoint(&st, &path).unwrap();
    let back: DetectorState<f32> = read_checkpoint(&path, Some(&st.config)).unwrap();
    assert_eq!(back, st);
    let mut other = st.config.clone();
    other.lr *= 2.0;
    assert!(matches!(read_checkpoint::<f32>(&path, Some(&other)), Err(Error::Config(_))));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_checkpoint::<f32>(&path, None), Err(Error::Parse { .. })));
}
