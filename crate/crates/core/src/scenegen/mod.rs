//! Synthetic scenes with exact 3D ground truth.

pub mod dataset;
pub mod render;
pub mod scene;

pub use dataset::{
    assign_split, build_dataset, fidelity_mad, load_sample, read_geometry, read_manifest, scene_seed, simulate_sample,
    valid_region, write_dataset, Dataset, DatasetConfig, DatasetGeometry, ManifestEntry, Record, Split,
};
pub use render::{label_for, render, render_with_ids, IdBuffer, Label, Sample, Visibility, FULL_VISIBILITY};
pub use scene::{generate_scene, CategorySpec, Scene, SceneConfig};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::bev_iou;
    use crate::geometry::{project_box, Box3D, CameraIntrinsics};

    fn cfg() -> DatasetConfig {
        DatasetConfig::default()
    }

    #[test]
    fn scenes_are_deterministic_and_seed_dependent() {
        let c = SceneConfig::default();
        assert_eq!(generate_scene(0, &c), generate_scene(0, &c));
        assert_ne!(generate_scene(0, &c).boxes, generate_scene(1, &c).boxes);
    }

    #[test]
    fn thousand_scenes_do_not_overlap() {
        let c = SceneConfig::default();
        for seed in 0..1000 {
            let s = generate_scene(seed, &c);
            assert!(!s.boxes.is_empty() && s.boxes.len() <= 12);
            for (i, a) in s.boxes.iter().enumerate() {
                assert!(a.center[2] >= 4.0 && a.center[2] <= 60.0 && a.center[0].abs() <= 25.0);
                for b in &s.boxes[i + 1..] {
                    assert_eq!(bev_iou(a, b), 0.0, "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn longer_focal_enlarges_every_visible_object() {
        let c = cfg();
        for seed in 0..20 {
            let s = generate_scene(seed, &c.scene);
            let a = render(&s, &c.intrinsics(700.0).unwrap());
            let b = render(&s, &c.intrinsics(1300.0).unwrap());
            for (la, lb) in a.labels.iter().zip(&b.labels) {
                if la.visibility == Visibility::Full && lb.visibility == Visibility::Full {
                    assert!(lb.box2d.area() > la.box2d.area());
                }
            }
        }
    }

    #[test]
    fn empty_scene_renders_background_only() {
        let c = cfg();
        let s = Scene {
            seed: 0,
            boxes: vec![],
            ground_height: 1.65,
            pattern: 1,
        };
        let (sample, ids) = render_with_ids(&s, &c.intrinsics(1000.0).unwrap());
        assert!(sample.labels.is_empty());
        assert!(ids.ids.iter().all(|&i| i == -1));
        assert!(sample.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn nearer_box_overwrites_farther_one() {
        let c = cfg();
        let near = Box3D::new([0.0, 0.9, 10.0], [2.0, 2.0, 1.5], 0.0, 0).unwrap();
        let far = Box3D::new([0.5, 0.4, 20.0], [4.0, 4.0, 2.5], 0.0, 1).unwrap();
        let s = Scene {
            seed: 0,
            boxes: vec![near, far],
            ground_height: 1.65,
            pattern: 0,
        };
        let k = c.intrinsics(1000.0).unwrap();
        let (sample, ids) = render_with_ids(&s, &k);
        let a = project_box(&near, &k).unwrap();
        let b = project_box(&far, &k).unwrap();
        let cx = 0.5 * (a.xmin.max(b.xmin) + a.xmax.min(b.xmax));
        let cy = 0.5 * (a.ymin.max(b.ymin) + a.ymax.min(b.ymax));
        assert_eq!(ids.get(cy as usize, cx as usize), 0);
        assert_ne!(sample.image.pixel(cy as usize, cx as usize), render(&Scene { boxes: vec![far], ..s.clone() }, &k).image.pixel(cy as usize, cx as usize));
        assert_eq!(sample.labels[1].visibility, Visibility::Partial);
    }

    #[test]
    fn labels_match_projection_and_silhouettes_are_filled() {
        let c = cfg();
        for seed in 0..30 {
            let s = generate_scene(seed, &c.scene);
            for f in [700.0, 1000.0, 1300.0] {
                let k = c.intrinsics(f).unwrap();
                let (sample, ids) = render_with_ids(&s, &k);
                for (i, l) in sample.labels.iter().enumerate() {
                    assert_eq!(l.box2d, project_box(&l.box3d, &k).unwrap());
                    if l.visibility != Visibility::Full {
                        continue;
                    }
                    assert!(render::rect_fill(&ids, &l.box2d) >= FULL_VISIBILITY, "seed {seed} f {f} box {i}");
                }
            }
        }
    }

    #[test]
    fn dataset_shape_and_splits() {
        let mut c = cfg();
        c.exact_renders = false;
        let ds = build_dataset(3, 5, &[700.0, 900.0, 1100.0, 1300.0], (1.0, 0.0, 0.0), &c, 2).unwrap();
        assert_eq!(ds.records.len(), 20);
        assert!(ds.records.iter().all(|r| r.split == Split::Train));
        let ds1 = build_dataset(3, 5, &[700.0, 900.0, 1100.0, 1300.0], (1.0, 0.0, 0.0), &c, 1).unwrap();
        assert_eq!(ds, ds1);
        let splits: Vec<Split> = (0..10).map(|i| assign_split(i, 10, (0.6, 0.2, 0.2))).collect();
        assert_eq!(splits.iter().filter(|s| **s == Split::Train).count(), 6);
        assert_eq!(splits.iter().filter(|s| **s == Split::Val).count(), 2);
        assert!(build_dataset(0, 1, &[], (1.0, 0.0, 0.0), &c, 1).is_err());
        assert!(build_dataset(0, 1, &[1000.0], (0.5, 0.0, 0.0), &c, 1).is_err());
        assert!(build_dataset(0, 1, &[1500.0], (1.0, 0.0, 0.0), &c, 1).is_err());
    }

    #[test]
    fn simulated_views_track_exact_renders() {
        let c = cfg();
        let ds = build_dataset(11, 6, &[700.0, 850.0, 1000.0, 1300.0], (1.0, 0.0, 0.0), &c, 1).unwrap();
        let k_can = c.intrinsics(c.canonical_focal).unwrap();
        let mut mads = Vec::new();
        for (sim, ex) in ds.records.iter().zip(&ds.exact) {
            assert_eq!(sim.sample.intrinsics, ex.sample.intrinsics);
            for (a, b) in sim.sample.labels.iter().zip(&ex.sample.labels) {
                assert!(a.box2d.max_edge_diff(&b.box2d) <= 1.0);
            }
            let valid = valid_region(&k_can, c.pixel_focal(sim.focal)).unwrap();
            if let Some(m) = fidelity_mad(&sim.sample, &ex.sample, 10.0, Some(valid)) {
                mads.push(m);
            }
        }
        let mean = mads.iter().sum::<f64>() / mads.len() as f64;
        assert!(mean < 0.08, "mean fidelity MAD {mean}");
    }

    #[test]
    fn dataset_round_trips_through_files() {
        let mut c = cfg();
        c.width = 64;
        c.height = 32;
        let ds = build_dataset(5, 3, &[700.0, 1300.0], (0.34, 0.33, 0.33), &c, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mp = write_dataset(&ds, dir.path()).unwrap();
        let entries = read_manifest(&mp).unwrap();
        assert_eq!(entries.len(), 6);
        let g = read_geometry(&mp).unwrap();
        for (e, r) in entries.iter().zip(&ds.records) {
            assert_eq!(e.split, r.split);
            let s = load_sample(&mp, &g, e).unwrap();
            assert_eq!(s.image, r.sample.image);
            assert_eq!(s.intrinsics, r.sample.intrinsics);
            for (a, b) in s.labels.iter().zip(&r.sample.labels) {
                assert_eq!(a.box3d, b.box3d);
                assert_eq!(a.box2d, b.box2d);
                assert_eq!(a.visibility, b.visibility);
            }
        }
        let exact = read_manifest(&dir.path().join(dataset::EXACT_MANIFEST)).unwrap();
        assert_eq!(exact.len(), 6);
        let again = tempfile::tempdir().unwrap();
        let mp2 = write_dataset(&ds, again.path()).unwrap();
        assert_eq!(std::fs::read(&mp).unwrap(), std::fs::read(&mp2).unwrap());
        let _ = CameraIntrinsics::<f64>::centered(1.0, 2, 2);
    }

    #[test]
    fn zero_scenes_gives_empty_manifest() {
        let ds = build_dataset(0, 0, &[1000.0], (1.0, 0.0, 0.0), &cfg(), 4).unwrap();
        assert!(ds.records.is_empty());
        let dir = tempfile::tempdir().unwrap();
        let mp = write_dataset(&ds, dir.path()).unwrap();
        assert!(read_manifest(&mp).unwrap().is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn scenes_are_reproducible_disjoint_and_labelled_by_projection(seed in any::<u64>(), f in 700.0f64..1300.0) {
                let c = cfg();
                let s = generate_scene(seed, &c.scene);
                prop_assert_eq!(&s, &generate_scene(seed, &c.scene));
                for (i, a) in s.boxes.iter().enumerate() {
                    for b in &s.boxes[i + 1..] {
                        prop_assert_eq!(bev_iou(a, b), 0.0);
                    }
                }
                let k = c.intrinsics(f).unwrap();
                for l in render(&s, &k).labels {
                    prop_assert_eq!(l.box2d, project_box(&l.box3d, &k).unwrap());
                }
            }
        }
    }
}
