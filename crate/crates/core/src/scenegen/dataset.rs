use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoder::text::SplitMix64;
use crate::error::{Error, Result};
use crate::geometry::{simulate_intrinsic, simulation_crop, transform_labels, Box3D, CameraIntrinsics, SimulationConfig};
use crate::image::Image;

use super::render::{label_for, render, Label, Sample, Visibility};
use super::scene::{generate_scene, SceneConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown split '{s}'")))
    }
}

/// Image geometry and rendering options for a synthetic dataset.
///
/// Focal lengths elsewhere are nominal: pixels at `reference_width`. An image
/// `width` pixels wide sees the focal scaled by `width / reference_width`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub width: usize,
    pub height: usize,
    pub reference_width: f64,
    pub canonical_focal: f64,
    /// Admissible nominal focals for simulated views.
    pub focal_range: (f64, f64),
    pub pad_value: f32,
    /// Also render every view exactly for oracle comparison.
    pub exact_renders: bool,
    pub scene: SceneConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 128,
            reference_width: 1280.0,
            canonical_focal: 1000.0,
            focal_range: (700.0, 1300.0),
            pad_value: 0.0,
            exact_renders: true,
            scene: SceneConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn pixel_focal(&self, nominal: f64) -> f64 {
        nominal * self.width as f64 / self.reference_width
    }

    pub fn nominal_focal(&self, pixel: f64) -> f64 {
        pixel * self.reference_width / self.width as f64
    }

    /// Centered intrinsics for a nominal focal.
    pub fn intrinsics(&self, nominal: f64) -> Result<CameraIntrinsics<f64>> {
        CameraIntrinsics::centered(self.pixel_focal(nominal), self.width, self.height)
    }

    pub fn simulation(&self) -> SimulationConfig<f64> {
        SimulationConfig {
            focal_range: (self.pixel_focal(self.focal_range.0), self.pixel_focal(self.focal_range.1)),
            pad_value: self.pad_value as f64,
        }
    }

    fn to_text(&self) -> String {
        format!(
            "width = {}\nheight = {}\nreference_width = {}\ncanonical_focal = {}\n",
            self.width, self.height, self.reference_width, self.canonical_focal
        )
    }
}

/// Image geometry recorded next to a written manifest.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetGeometry {
    pub width: usize,
    pub height: usize,
    pub reference_width: f64,
}

impl DatasetGeometry {
    pub fn intrinsics(&self, nominal: f64) -> Result<CameraIntrinsics<f64>> {
        CameraIntrinsics::centered(nominal * self.width as f64 / self.reference_width, self.width, self.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub split: Split,
    pub scene_index: usize,
    /// Nominal focal.
    pub focal: f64,
    pub sample: Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub focals: Vec<f64>,
    /// Simulated views, sorted by (scene, focal order).
    pub records: Vec<Record>,
    /// Exact re-renders, parallel to `records` (empty if disabled).
    pub exact: Vec<Record>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Seed of scene `index` in a dataset built from `seed`.
pub fn scene_seed(seed: u64, index: usize) -> u64 {
    let mut g = SplitMix64::new(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    g.next_u64()
}

/// Split of scene `index` out of `n`, assigned by cumulative ratios.
pub fn assign_split(index: usize, n: usize, ratios: (f64, f64, f64)) -> Split {
    let t = (index as f64 + 0.5) / n as f64;
    if t < ratios.0 {
        Split::Train
    } else if t < ratios.0 + ratios.1 {
        Split::Val
    } else {
        Split::Test
    }
}

/// Re-images a canonical sample at nominal focal `focal`.
pub fn simulate_sample(canonical: &Sample, focal: f64, cfg: &DatasetConfig) -> Result<Sample> {
    let k = canonical.intrinsics;
    let (image, k_new) = simulate_intrinsic(&canonical.image.cast::<f64>(), &k, cfg.pixel_focal(focal), &cfg.simulation())?;
    let boxes: Vec<Box3D<f64>> = canonical.labels.iter().map(|l| l.box3d).collect();
    let labels = transform_labels(&boxes, &k, &k_new)
        .iter()
        .zip(&canonical.labels)
        .map(|(t, src)| {
            // Content absent from the canonical view stays absent.
            let on_screen = src.visibility != Visibility::OutOfFrame;
            label_for(&t.box3d, &k_new, src.unoccluded, on_screen, src.visibility == Visibility::Partial)
        })
        .collect();
    Ok(Sample {
        scene_seed: canonical.scene_seed,
        intrinsics: k_new,
        image: image.cast(),
        labels,
    })
}

fn build_scene(seed: u64, index: usize, focals: &[f64], split: Split, cfg: &DatasetConfig) -> Result<(Vec<Record>, Vec<Record>)> {
    let scene = generate_scene(scene_seed(seed, index), &cfg.scene);
    let canonical = render(&scene, &cfg.intrinsics(cfg.canonical_focal)?);
    let mut sim = Vec::with_capacity(focals.len());
    let mut exact = Vec::new();
    for &f in focals {
        sim.push(Record {
            split,
            scene_index: index,
            focal: f,
            sample: simulate_sample(&canonical, f, cfg)?,
        });
        if cfg.exact_renders {
            exact.push(Record {
                split,
                scene_index: index,
                focal: f,
                sample: render(&scene, &cfg.intrinsics(f)?),
            });
        }
    }
    Ok((sim, exact))
}

/// Builds `n_scenes` scenes, each viewed at every focal in `focals` through
/// simulation of one canonical render. Scenes are spread over `workers`
/// threads; the output order does not depend on the worker count.
pub fn build_dataset(
    seed: u64,
    n_scenes: usize,
    focals: &[f64],
    ratios: (f64, f64, f64),
    cfg: &DatasetConfig,
    workers: usize,
) -> Result<Dataset> {
    if focals.is_empty() {
        return Err(Error::Validation("focal set is empty".into()));
    }
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("split ratios ({a}, {b}, {c}) must be non-negative and sum to 1")));
    }
    for &f in focals {
        if !(f >= cfg.focal_range.0 && f <= cfg.focal_range.1) {
            return Err(Error::Domain(format!(
                "focal {f} outside simulation range [{}, {}]",
                cfg.focal_range.0, cfg.focal_range.1
            )));
        }
    }
    let workers = workers.max(1).min(n_scenes.max(1));
    let mut parts: Vec<Result<Vec<(Vec<Record>, Vec<Record>)>>> = Vec::new();
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                s.spawn(move || {
                    (w..n_scenes)
                        .step_by(workers)
                        .map(|i| build_scene(seed, i, focals, assign_split(i, n_scenes, ratios), cfg))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        parts = handles.into_iter().map(|h| h.join().expect("dataset worker panicked")).collect();
    });
    let mut per_scene: Vec<Option<(Vec<Record>, Vec<Record>)>> = vec![None; n_scenes];
    for (w, part) in parts.into_iter().enumerate() {
        for (j, item) in part?.into_iter().enumerate() {
            per_scene[w + j * workers] = Some(item);
        }
    }
    let mut records = Vec::with_capacity(n_scenes * focals.len());
    let mut exact = Vec::new();
    for (sim, ex) in per_scene.into_iter().flatten() {
        records.extend(sim);
        exact.extend(ex);
    }
    Ok(Dataset {
        config: cfg.clone(),
        focals: focals.to_vec(),
        records,
        exact,
    })
}

pub const MANIFEST: &str = "manifest.tsv";
pub const EXACT_MANIFEST: &str = "manifest_exact.tsv";
pub const GEOMETRY_FILE: &str = "dataset.cfg";

/// One manifest line; paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub focal: f64,
    pub image: PathBuf,
    pub label: PathBuf,
}

pub fn format_label(l: &Label) -> String {
    let b = &l.box3d;
    format!(
        "{} {} {} {} {} {} {} {} {}",
        b.category, b.center[0], b.center[1], b.center[2], b.dims[0], b.dims[1], b.dims[2], b.yaw, l.visibility as u8
    )
}

/// Parses a label file into boxes and visibility codes.
pub fn parse_labels(path: &Path, text: &str) -> Result<Vec<(Box3D<f64>, Visibility)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return Err(Error::parse(path, format!("line {}: expected 9 fields, got {}", n + 1, f.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse::<f64>()
                .map_err(|_| Error::parse(path, format!("line {}: bad number '{}'", n + 1, f[i])))
        };
        let category = f[0]
            .parse::<u32>()
            .map_err(|_| Error::parse(path, format!("line {}: bad category '{}'", n + 1, f[0])))?;
        let vis = f[8]
            .parse::<u8>()
            .ok()
            .and_then(Visibility::from_code)
            .ok_or_else(|| Error::parse(path, format!("line {}: bad visibility '{}'", n + 1, f[8])))?;
        let b = Box3D::new([num(1)?, num(2)?, num(3)?], [num(4)?, num(5)?, num(6)?], num(7)?, category)
            .map_err(|e| Error::parse(path, format!("line {}: {e}", n + 1)))?;
        out.push((b, vis));
    }
    Ok(out)
}

fn write_records(dir: &Path, sub: &str, records: &[Record], manifest: &str) -> Result<PathBuf> {
    let img_dir = dir.join(sub).join("images");
    let lbl_dir = dir.join(sub).join("labels");
    for d in [&img_dir, &lbl_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut lines = String::new();
    for r in records {
        let stem = format!("s{:06}_f{}", r.scene_index, crate::encoder::bank::format_focal(r.focal));
        let img_rel = format!("{sub}/images/{stem}.arr");
        let lbl_rel = format!("{sub}/labels/{stem}.txt");
        r.sample.image.write_array(&dir.join(&img_rel))?;
        let body: String = r.sample.labels.iter().map(|l| format_label(l) + "\n").collect();
        let lp = dir.join(&lbl_rel);
        fs::write(&lp, body).map_err(|e| Error::io(&lp, e))?;
        lines.push_str(&format!("{}\t{}\t{}\t{}\n", r.split, r.focal, img_rel, lbl_rel));
    }
    let mp = dir.join(manifest);
    fs::write(&mp, lines).map_err(|e| Error::io(&mp, e))?;
    Ok(mp)
}

/// Writes images, labels and manifests under `dir`; returns the manifest path.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let gp = dir.join(GEOMETRY_FILE);
    fs::write(&gp, ds.config.to_text()).map_err(|e| Error::io(&gp, e))?;
    let mp = write_records(dir, "sim", &ds.records, MANIFEST)?;
    if !ds.exact.is_empty() {
        write_records(dir, "exact", &ds.exact, EXACT_MANIFEST)?;
    }
    Ok(mp)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(path, format!("line {}: expected 4 tab-separated fields", n + 1)));
        }
        let focal = f[1]
            .parse::<f64>()
            .map_err(|_| Error::parse(path, format!("line {}: bad focal '{}'", n + 1, f[1])))?;
        out.push(ManifestEntry {
            split: f[0].parse().map_err(|e: Error| Error::parse(path, format!("line {}: {e}", n + 1)))?,
            focal,
            image: PathBuf::from(f[2]),
            label: PathBuf::from(f[3]),
        });
    }
    Ok(out)
}

/// Reads the geometry sidecar next to a manifest.
pub fn read_geometry(manifest: &Path) -> Result<DatasetGeometry> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let path = dir.join(GEOMETRY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let (mut width, mut height, mut reference_width) = (None, None, None);
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let v = v.trim();
        let bad = || Error::parse(&path, format!("bad value '{v}'"));
        match k.trim() {
            "width" => width = Some(v.parse::<usize>().map_err(|_| bad())?),
            "height" => height = Some(v.parse::<usize>().map_err(|_| bad())?),
            "reference_width" => reference_width = Some(v.parse::<f64>().map_err(|_| bad())?),
            _ => {}
        }
    }
    match (width, height, reference_width) {
        (Some(width), Some(height), Some(reference_width)) => Ok(DatasetGeometry {
            width,
            height,
            reference_width,
        }),
        _ => Err(Error::parse(&path, "missing width, height or reference_width")),
    }
}

/// Loads one manifest entry as a sample. Visibility codes come from the label
/// file; 2D boxes are recomputed under the record's intrinsics.
pub fn load_sample(manifest: &Path, geometry: &DatasetGeometry, entry: &ManifestEntry) -> Result<Sample> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let k = geometry.intrinsics(entry.focal)?;
    let image = Image::<f32>::read_array(&dir.join(&entry.image))?;
    if image.width != k.width || image.height != k.height {
        return Err(Error::parse(
            dir.join(&entry.image),
            format!("image is {}x{}, dataset geometry says {}x{}", image.width, image.height, k.width, k.height),
        ));
    }
    let lp = dir.join(&entry.label);
    let text = fs::read_to_string(&lp).map_err(|e| Error::io(&lp, e))?;
    let labels = parse_labels(&lp, &text)?
        .into_iter()
        .map(|(b, vis)| {
            let mut l = label_for(&b, &k, 1.0, true, false);
            l.visibility = vis;
            l.unoccluded = if vis == Visibility::Full { 1.0 } else { 0.0 };
            l
        })
        .collect();
    Ok(Sample {
        scene_seed: 0,
        intrinsics: k,
        image,
        labels,
    })
}

/// Mean absolute pixel difference between two views of the same camera,
/// restricted to the 2D boxes of labels at depth `>= min_depth` and to the
/// region backed by real source content (`valid`).
pub fn fidelity_mad(a: &Sample, b: &Sample, min_depth: f64, valid: Option<(usize, usize, usize, usize)>) -> Option<f64> {
    let (vx0, vy0, vx1, vy1) = valid.unwrap_or((0, 0, a.image.width, a.image.height));
    let mut mask = vec![false; a.image.width * a.image.height];
    for l in a.labels.iter().filter(|l| l.box3d.center[2] >= min_depth && l.visibility != Visibility::OutOfFrame) {
        let bx = &l.box2d;
        let x0 = (bx.xmin.ceil() as usize).max(vx0);
        let x1 = (bx.xmax.floor() as usize).min(vx1);
        let y0 = (bx.ymin.ceil() as usize).max(vy0);
        let y1 = (bx.ymax.floor() as usize).min(vy1);
        for y in y0..y1 {
            for x in x0..x1 {
                mask[y * a.image.width + x] = true;
            }
        }
    }
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let (y, x) = (i / a.image.width, i % a.image.width);
        for c in 0..a.image.channels {
            sum += (a.image.get(y, x, c) - b.image.get(y, x, c)).abs() as f64;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Pixel rectangle of a simulated view backed by source content.
pub fn valid_region(k_source: &CameraIntrinsics<f64>, f_target_px: f64) -> Result<(usize, usize, usize, usize)> {
    let crop = simulation_crop(k_source, f_target_px)?;
    if crop.width <= k_source.width {
        return Ok((0, 0, k_source.width, k_source.height));
    }
    let (sx, sy) = crop.pixel_scale(k_source);
    let bx = ((crop.width - k_source.width) as f64 * 0.5 * sx).ceil() as usize + 1;
    let by = ((crop.height - k_source.height) as f64 * 0.5 * sy).ceil() as usize + 1;
    Ok((bx, by, k_source.width.saturating_sub(bx), k_source.height.saturating_sub(by)))
}
