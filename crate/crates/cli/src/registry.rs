//! Flat configuration keys shared by the config file, the environment and
//! the command-line flags.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use mono3d_core::detector::DetectorConfig;
use mono3d_core::eval::DifficultyConfig;
use mono3d_core::inference::{EvalOptions, InterpolationPolicy};
use mono3d_core::scenegen::DatasetConfig;
use mono3d_core::{Error, Result};

/// Environment variables `MONO3D_<KEY>` override config-file values.
pub const ENV_PREFIX: &str = "MONO3D_";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cmd {
    Synth,
    Bank,
    Train,
    Eval,
}

impl Cmd {
    pub const ALL: [Cmd; 4] = [Cmd::Synth, Cmd::Bank, Cmd::Train, Cmd::Eval];

    pub fn name(self) -> &'static str {
        match self {
            Cmd::Synth => "synth",
            Cmd::Bank => "bank",
            Cmd::Train => "train",
            Cmd::Eval => "eval",
        }
    }

    pub fn about(self) -> &'static str {
        match self {
            Cmd::Synth => "Render a synthetic dataset viewed at several focal lengths",
            Cmd::Bank => "Encode focal descriptions into a frozen intrinsic embedding bank",
            Cmd::Train => "Train a detector variant and write a checkpoint plus metrics log",
            Cmd::Eval => "Evaluate a checkpoint over a focal grid and under focal mismatch",
        }
    }
}

const ALL: &[Cmd] = &Cmd::ALL;
const SYNTH: &[Cmd] = &[Cmd::Synth];
const BANK: &[Cmd] = &[Cmd::Bank];
const TRAIN: &[Cmd] = &[Cmd::Train];
const EVAL: &[Cmd] = &[Cmd::Eval];
const TRAIN_EVAL: &[Cmd] = &[Cmd::Train, Cmd::Eval];
const FOCAL_CMDS: &[Cmd] = &[Cmd::Synth, Cmd::Bank, Cmd::Eval];

#[derive(Clone, Debug)]
pub struct KeySpec {
    pub key: String,
    pub help: String,
    pub default: String,
    pub commands: &'static [Cmd],
}

impl KeySpec {
    /// Long flag name (without the leading dashes).
    pub fn flag(&self) -> String {
        flag_name(&self.key)
    }

    pub fn env_var(&self) -> String {
        env_name(&self.key)
    }
}

pub fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase().replace(['.', '-'], "_"))
}

fn spec(key: &str, default: impl Into<String>, commands: &'static [Cmd], help: &str) -> KeySpec {
    KeySpec {
        key: key.to_string(),
        help: help.to_string(),
        default: default.into(),
        commands,
    }
}

fn detector_help(key: &str) -> &'static str {
    match key {
        "width" => "input width in pixels (taken from the dataset when unset)",
        "height" => "input height in pixels (taken from the dataset when unset)",
        "n_classes" => "number of object categories",
        "channels" => "output channels of the stem and each stride-2 backbone block",
        "block_depth" => "extra stride-1 convolutions per backbone block",
        "stub_scales" => "reuse the deepest feature map for all three memory scales",
        "d_model" => "transformer width",
        "n_queries" => "number of object queries",
        "n_decoder_layers" => "decoder depth",
        "n_heads" => "attention heads",
        "ffn_dim" => "decoder feed-forward width",
        "loss.class" => "focal classification loss weight",
        "loss.bbox" => "2D box L1 loss weight",
        "loss.giou" => "2D GIoU loss weight",
        "loss.center3d" => "projected 3D center L1 loss weight",
        "loss.dim" => "3D size L1 loss weight",
        "loss.depth" => "object depth L1 loss weight",
        "loss.dmap" => "depth-map L1 loss weight",
        "loss.yaw" => "orientation L1 loss weight",
        "cost.class" => "classification matching cost",
        "cost.bbox" => "2D box L1 matching cost",
        "cost.giou" => "2D GIoU matching cost",
        "cost.center3d" => "projected center matching cost",
        "focal_alpha" => "focal loss alpha",
        "focal_gamma" => "focal loss gamma",
        "lr" => "base learning rate",
        "weight_decay" => "decoupled weight decay",
        "batch_size" => "images per optimizer step",
        "decay_rate" => "learning-rate factor applied at each decay epoch",
        "decay_epochs" => "decay epochs on the reference schedule",
        "reference_epochs" => "schedule length the decay epochs refer to",
        "grad_clip" => "global gradient-norm clip (0 disables)",
        "aux_loss" => "supervise every decoder layer",
        "connector_hidden" => "connector hidden width (0 means the bank width)",
        "gelu" => "GELU variant: exact or tanh",
        "bank_dim" => "embedding width (taken from the bank when unset)",
        "dims_prior" => "mean object size l,h,w used to center the size head",
        "depth_prior" => "typical depth used to center the depth heads",
        "fusion" => "intrinsic_aware,feature_fusion,query_fusion (overridden by --ablation)",
        "source" => "connector input and kind, e.g. bank,mlp (overridden by --ablation)",
        _ => "detector setting",
    }
}

/// Every configuration key, in display order.
pub fn registry() -> Vec<KeySpec> {
    let ds = DatasetConfig::default();
    let sc = &ds.scene;
    let ev = EvalOptions::default();
    let pol = InterpolationPolicy::default();
    let mut keys = vec![
        spec("seed", "0", ALL, "seed of every random generator"),
        spec("workers", "1", ALL, "worker threads"),
        spec("out", "", ALL, "output directory"),
        spec("focals", "", FOCAL_CMDS, "comma-separated nominal focals (synth/bank default 700,900,1100,1300; eval default: all in the manifest)"),
        spec("scenes", "100", SYNTH, "number of scenes"),
        spec("ratios", "0.8,0.1,0.1", SYNTH, "train,val,test split ratios"),
        spec("dataset.width", ds.width.to_string(), SYNTH, "image width in pixels"),
        spec("dataset.height", ds.height.to_string(), SYNTH, "image height in pixels"),
        spec("dataset.reference_width", ds.reference_width.to_string(), SYNTH, "width the nominal focals refer to"),
        spec("dataset.canonical_focal", ds.canonical_focal.to_string(), SYNTH, "nominal focal of the source render"),
        spec("dataset.focal_min", ds.focal_range.0.to_string(), SYNTH, "smallest admissible simulated focal"),
        spec("dataset.focal_max", ds.focal_range.1.to_string(), SYNTH, "largest admissible simulated focal"),
        spec("dataset.pad_value", ds.pad_value.to_string(), SYNTH, "fill value outside the source frame"),
        spec("dataset.exact_renders", ds.exact_renders.to_string(), SYNTH, "also write exact re-renders"),
        spec("dataset.min_boxes", sc.min_boxes.to_string(), SYNTH, "fewest objects per scene"),
        spec("dataset.max_boxes", sc.max_boxes.to_string(), SYNTH, "most objects per scene"),
        spec("dataset.z_min", sc.z_range.0.to_string(), SYNTH, "nearest object depth in meters"),
        spec("dataset.z_max", sc.z_range.1.to_string(), SYNTH, "farthest object depth in meters"),
        spec("dataset.x_limit", sc.x_limit.to_string(), SYNTH, "largest lateral offset in meters"),
        spec("dataset.yaw_min", sc.yaw_range.0.to_string(), SYNTH, "smallest object yaw in radians"),
        spec("dataset.yaw_max", sc.yaw_range.1.to_string(), SYNTH, "largest object yaw in radians"),
        spec("dataset.n_categories", sc.categories.len().to_string(), SYNTH, "number of categories (car, truck, pedestrian)"),
        spec("dataset.min_gap", sc.min_gap.to_string(), SYNTH, "clearance between objects in meters"),
        spec("desc_dir", "data/descriptions", BANK, "directory of focal_<F>.txt description files"),
        spec("encoder", "reference", BANK, "text encoder: reference or external:<command>"),
        spec("dim", "64", BANK, "embedding width"),
        spec("manifest", "", TRAIN_EVAL, "dataset manifest"),
        spec("bank", "", TRAIN_EVAL, "embedding bank file"),
        spec("epochs", "30", TRAIN, "training epochs"),
        spec("max_steps", "0", TRAIN, "stop after this many steps (0 runs every epoch)"),
        spec("ablation", "full", TRAIN, "full, no-encoder, no-connector, no-featfuse, no-queryfuse or baseline"),
        spec("ckpt", "", EVAL, "checkpoint to evaluate"),
        spec("mismatch", "", EVAL, "comma-separated focal perturbations in pixels"),
        spec("eval.split", "test", EVAL, "split to evaluate: train, val, test or all"),
        spec("eval.iou_threshold", ev.iou_threshold.to_string(), EVAL, "IoU needed for a true positive"),
        spec("eval.easy_min_height", ev.difficulty.easy_min_height.to_string(), EVAL, "nominal 2D height for easy objects"),
        spec("eval.moderate_min_height", ev.difficulty.moderate_min_height.to_string(), EVAL, "nominal 2D height for moderate objects"),
        spec("eval.score_threshold", ev.score_threshold.to_string(), EVAL, "drop detections scoring below this"),
        spec("eval.batch", ev.batch.to_string(), EVAL, "images per forward pass"),
        spec("inference.threshold", pol.threshold.to_string(), EVAL, "focal gap in pixels up to which the nearest embedding is reused"),
        spec("inference.space", pol.space.to_string(), EVAL, "interpolation space: bank or post-connector"),
        spec("inference.extrapolation", pol.extrapolation.to_string(), EVAL, "outside the seen range: linear or clamp"),
    ];
    let det = DetectorConfig::default();
    for k in DetectorConfig::KEYS {
        let default = match k {
            "width" | "height" | "bank_dim" => String::new(),
            _ => det.get(k).expect("registered detector key"),
        };
        keys.push(spec(&format!("detector.{k}"), default, TRAIN, detector_help(k)));
    }
    keys
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Env,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Env => "env",
            Source::Flag => "flag",
        })
    }
}

/// Resolved key/value map. Later layers win: default < file < env < flag.
#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<String, (String, Source)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: registry().into_iter().map(|k| (k.key, (k.default, Source::Default))).collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = (value.trim().to_string(), source);
                Ok(())
            }
            None => Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
    }

    /// Applies a `key = value` file; `#` starts a comment line.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            self.set(k.trim(), v, Source::File)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    /// Applies `MONO3D_*` variables; any that name no key are rejected.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let by_env: BTreeMap<String, String> = self.values.keys().map(|k| (env_name(k), k.clone())).collect();
        for (name, value) in vars {
            if !name.starts_with(ENV_PREFIX) {
                continue;
            }
            let key = by_env
                .get(&name)
                .ok_or_else(|| Error::Config(format!("environment variable {name} names no configuration key")))?;
            self.set(&key.clone(), &value, Source::Env)?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.values.get(key).unwrap_or_else(|| panic!("unregistered key {key}")).0
    }

    pub fn source(&self, key: &str) -> Source {
        self.values[key].1
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.source(key) != Source::Default
    }

    /// Lines `key = value  (source)` for every key.
    pub fn describe(&self) -> Vec<String> {
        self.values.iter().map(|(k, (v, s))| format!("{k} = {v}  ({s})")).collect()
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::Config(format!("invalid boolean '{v}' for {key}"))),
        }
    }

    pub fn list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("invalid number '{x}' in {key}"))))
            .collect()
    }

    /// Non-empty path value, or a configuration error naming the flag.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        let v = self.raw(key);
        if v.is_empty() {
            return Err(Error::Config(format!("--{} is required", flag_name(key))));
        }
        Ok(PathBuf::from(v))
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        let v = self.raw(key);
        (!v.is_empty()).then(|| PathBuf::from(v))
    }

    pub fn focals_or(&self, fallback: &[f64]) -> Result<Vec<f64>> {
        let f = self.list("focals")?;
        Ok(if f.is_empty() { fallback.to_vec() } else { f })
    }

    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        let mut ds = DatasetConfig::default();
        ds.width = self.parse("dataset.width")?;
        ds.height = self.parse("dataset.height")?;
        ds.reference_width = self.parse("dataset.reference_width")?;
        ds.canonical_focal = self.parse("dataset.canonical_focal")?;
        ds.focal_range = (self.parse("dataset.focal_min")?, self.parse("dataset.focal_max")?);
        ds.pad_value = self.parse("dataset.pad_value")?;
        ds.exact_renders = self.bool("dataset.exact_renders")?;
        let sc = &mut ds.scene;
        sc.min_boxes = self.parse("dataset.min_boxes")?;
        sc.max_boxes = self.parse("dataset.max_boxes")?;
        sc.z_range = (self.parse("dataset.z_min")?, self.parse("dataset.z_max")?);
        sc.x_limit = self.parse("dataset.x_limit")?;
        sc.yaw_range = (self.parse("dataset.yaw_min")?, self.parse("dataset.yaw_max")?);
        sc.min_gap = self.parse("dataset.min_gap")?;
        let n: usize = self.parse("dataset.n_categories")?;
        if n == 0 || n > sc.categories.len() {
            return Err(Error::Config(format!(
                "dataset.n_categories must be between 1 and {}",
                sc.categories.len()
            )));
        }
        sc.categories.truncate(n);
        if ds.width == 0 || ds.height == 0 || sc.min_boxes > sc.max_boxes || !(sc.z_range.0 < sc.z_range.1) {
            return Err(Error::Config("dataset geometry or object ranges are empty".into()));
        }
        Ok(ds)
    }

    /// Detector settings from every explicitly given `detector.*` key.
    /// Width, height and bank width stay at their defaults unless set.
    pub fn detector_config(&self) -> Result<DetectorConfig> {
        let mut cfg = DetectorConfig::default();
        for k in DetectorConfig::KEYS {
            let v = self.raw(&format!("detector.{k}"));
            if !v.is_empty() {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn eval_options(&self) -> Result<EvalOptions> {
        Ok(EvalOptions {
            iou_threshold: self.parse("eval.iou_threshold")?,
            difficulty: DifficultyConfig {
                easy_min_height: self.parse("eval.easy_min_height")?,
                moderate_min_height: self.parse("eval.moderate_min_height")?,
            },
            score_threshold: self.parse("eval.score_threshold")?,
            batch: self.parse::<usize>("eval.batch")?.max(1),
            workers: self.workers()?,
            ..EvalOptions::default()
        })
    }

    pub fn policy(&self) -> Result<InterpolationPolicy> {
        let p = InterpolationPolicy {
            threshold: self.parse("inference.threshold")?,
            space: self.parse("inference.space")?,
            extrapolation: self.parse("inference.extrapolation")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse("seed")
    }

    pub fn workers(&self) -> Result<usize> {
        let w: usize = self.parse("workers")?;
        if w == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        Ok(w)
    }

    /// Type-checks every value a command reads.
    pub fn validate(&self, cmd: Cmd) -> Result<()> {
        self.seed()?;
        self.workers()?;
        self.list("focals")?;
        match cmd {
            Cmd::Synth => {
                self.parse::<usize>("scenes")?;
                self.list("ratios")?;
                self.dataset_config()?;
            }
            Cmd::Bank => {
                self.parse::<usize>("dim")?;
            }
            Cmd::Train => {
                self.parse::<usize>("epochs")?;
                self.parse::<u64>("max_steps")?;
                self.parse::<mono3d_core::detector::Ablation>("ablation")?;
                self.detector_config()?;
            }
            Cmd::Eval => {
                self.list("mismatch")?;
                self.eval_options()?;
                self.policy()?;
            }
        }
        Ok(())
    }
}
