use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::GeluKind;

/// Where the connector's input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IntrinsicSource {
    /// Frozen bank vector of the image's focal.
    Bank,
    /// Trainable linear map of the raw focal (in thousands of pixels).
    LinearFocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConnectorKind {
    /// Two-layer GELU MLP.
    Mlp,
    /// Single linear projection.
    Linear,
}

/// Named training variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    Full,
    NoEncoder,
    NoConnector,
    NoFeatFuse,
    NoQueryFuse,
    Baseline,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::NoEncoder,
        Ablation::NoConnector,
        Ablation::NoFeatFuse,
        Ablation::NoQueryFuse,
        Ablation::Baseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoEncoder => "no-encoder",
            Ablation::NoConnector => "no-connector",
            Ablation::NoFeatFuse => "no-featfuse",
            Ablation::NoQueryFuse => "no-queryfuse",
            Ablation::Baseline => "baseline",
        }
    }

    /// Sets the toggles this variant controls.
    pub fn apply(self, cfg: &mut DetectorConfig) {
        cfg.intrinsic_aware = self != Ablation::Baseline;
        cfg.feature_fusion = !matches!(self, Ablation::NoFeatFuse | Ablation::Baseline);
        cfg.query_fusion = !matches!(self, Ablation::NoQueryFuse | Ablation::Baseline);
        cfg.source = if self == Ablation::NoEncoder {
            IntrinsicSource::LinearFocal
        } else {
            IntrinsicSource::Bank
        };
        cfg.connector = if self == Ablation::NoConnector {
            ConnectorKind::Linear
        } else {
            ConnectorKind::Mlp
        };
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Ablation::ALL.iter().map(|a| a.name()).collect();
            Error::Config(format!("unknown ablation '{s}' (expected one of {})", names.join(", ")))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub class: f64,
    pub bbox: f64,
    pub giou: f64,
    pub center3d: f64,
    pub dim: f64,
    pub depth: f64,
    pub dmap: f64,
    pub yaw: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            class: 2.0,
            bbox: 5.0,
            giou: 2.0,
            center3d: 10.0,
            dim: 1.0,
            depth: 1.0,
            dmap: 1.0,
            yaw: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchCosts {
    pub class: f64,
    pub bbox: f64,
    pub giou: f64,
    pub center3d: f64,
}

impl Default for MatchCosts {
    fn default() -> Self {
        Self {
            class: 2.0,
            bbox: 5.0,
            giou: 2.0,
            center3d: 10.0,
        }
    }
}

/// Architecture and optimization settings of the detector.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorConfig {
    pub width: usize,
    pub height: usize,
    pub n_classes: usize,
    /// Output channels of the stem and of each stride-2 block.
    pub channels: Vec<usize>,
    /// Extra stride-1 convolutions per block.
    pub block_depth: usize,
    /// Use the deepest map for all three scales.
    pub stub_scales: bool,
    pub d_model: usize,
    pub n_queries: usize,
    pub n_decoder_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub weights: LossWeights,
    pub costs: MatchCosts,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub decay_rate: f64,
    pub decay_epochs: Vec<usize>,
    pub reference_epochs: usize,
    /// Global gradient-norm clip; 0 disables.
    pub grad_clip: f64,
    /// Also supervise every intermediate decoder layer through the shared heads.
    pub aux_loss: bool,
    pub intrinsic_aware: bool,
    pub feature_fusion: bool,
    pub query_fusion: bool,
    pub source: IntrinsicSource,
    pub connector: ConnectorKind,
    /// Width of the connector's hidden layer; 0 means the bank width.
    pub connector_hidden: usize,
    pub gelu: GeluKind,
    pub bank_dim: usize,
    /// Mean object size used to center the dimension head.
    pub dims_prior: [f64; 3],
    /// Typical depth used to center the depth heads, meters.
    pub depth_prior: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 128,
            n_classes: 3,
            channels: vec![16, 32, 64, 128, 128],
            block_depth: 1,
            stub_scales: false,
            d_model: 256,
            n_queries: 50,
            n_decoder_layers: 3,
            n_heads: 8,
            ffn_dim: 256,
            weights: LossWeights::default(),
            costs: MatchCosts::default(),
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            lr: 2e-4,
            weight_decay: 1e-4,
            batch_size: 16,
            decay_rate: 0.5,
            decay_epochs: vec![85, 125, 165, 205],
            reference_epochs: 250,
            grad_clip: 0.0,
            aux_loss: true,
            intrinsic_aware: true,
            feature_fusion: true,
            query_fusion: true,
            source: IntrinsicSource::Bank,
            connector: ConnectorKind::Mlp,
            connector_hidden: 0,
            gelu: GeluKind::Exact,
            bank_dim: 64,
            dims_prior: [3.6, 1.4, 1.8],
            depth_prior: 20.0,
        }
    }
}

fn list<T: fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean '{v}' for {key}"))),
    }
}

impl DetectorConfig {
    /// Every key accepted by [`DetectorConfig::set`].
    pub const KEYS: [&'static str; 40] = [
        "width",
        "height",
        "n_classes",
        "channels",
        "block_depth",
        "stub_scales",
        "d_model",
        "n_queries",
        "n_decoder_layers",
        "n_heads",
        "ffn_dim",
        "loss.class",
        "loss.bbox",
        "loss.giou",
        "loss.center3d",
        "loss.dim",
        "loss.depth",
        "loss.dmap",
        "loss.yaw",
        "cost.class",
        "cost.bbox",
        "cost.giou",
        "cost.center3d",
        "focal_alpha",
        "focal_gamma",
        "lr",
        "weight_decay",
        "batch_size",
        "decay_rate",
        "decay_epochs",
        "reference_epochs",
        "grad_clip",
        "aux_loss",
        "connector_hidden",
        "gelu",
        "bank_dim",
        "dims_prior",
        "depth_prior",
        "fusion",
        "source",
    ];

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "width" => self.width.to_string(),
            "height" => self.height.to_string(),
            "n_classes" => self.n_classes.to_string(),
            "channels" => list(&self.channels),
            "block_depth" => self.block_depth.to_string(),
            "stub_scales" => self.stub_scales.to_string(),
            "d_model" => self.d_model.to_string(),
            "n_queries" => self.n_queries.to_string(),
            "n_decoder_layers" => self.n_decoder_layers.to_string(),
            "n_heads" => self.n_heads.to_string(),
            "ffn_dim" => self.ffn_dim.to_string(),
            "loss.class" => self.weights.class.to_string(),
            "loss.bbox" => self.weights.bbox.to_string(),
            "loss.giou" => self.weights.giou.to_string(),
            "loss.center3d" => self.weights.center3d.to_string(),
            "loss.dim" => self.weights.dim.to_string(),
            "loss.depth" => self.weights.depth.to_string(),
            "loss.dmap" => self.weights.dmap.to_string(),
            "loss.yaw" => self.weights.yaw.to_string(),
            "cost.class" => self.costs.class.to_string(),
            "cost.bbox" => self.costs.bbox.to_string(),
            "cost.giou" => self.costs.giou.to_string(),
            "cost.center3d" => self.costs.center3d.to_string(),
            "focal_alpha" => self.focal_alpha.to_string(),
            "focal_gamma" => self.focal_gamma.to_string(),
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "decay_rate" => self.decay_rate.to_string(),
            "decay_epochs" => list(&self.decay_epochs),
            "reference_epochs" => self.reference_epochs.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "aux_loss" => self.aux_loss.to_string(),
            "connector_hidden" => self.connector_hidden.to_string(),
            "gelu" => match self.gelu {
                GeluKind::Exact => "exact".into(),
                GeluKind::Tanh => "tanh".into(),
            },
            "bank_dim" => self.bank_dim.to_string(),
            "dims_prior" => list(&self.dims_prior),
            "depth_prior" => self.depth_prior.to_string(),
            "fusion" => format!(
                "{},{},{}",
                self.intrinsic_aware, self.feature_fusion, self.query_fusion
            ),
            "source" => format!(
                "{},{}",
                match self.source {
                    IntrinsicSource::Bank => "bank",
                    IntrinsicSource::LinearFocal => "linear-focal",
                },
                match self.connector {
                    ConnectorKind::Mlp => "mlp",
                    ConnectorKind::Linear => "linear",
                }
            ),
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "width" => self.width = parse(key, v)?,
            "height" => self.height = parse(key, v)?,
            "n_classes" => self.n_classes = parse(key, v)?,
            "channels" => self.channels = parse_list(key, v)?,
            "block_depth" => self.block_depth = parse(key, v)?,
            "stub_scales" => self.stub_scales = parse_bool(key, v)?,
            "d_model" => self.d_model = parse(key, v)?,
            "n_queries" => self.n_queries = parse(key, v)?,
            "n_decoder_layers" => self.n_decoder_layers = parse(key, v)?,
            "n_heads" => self.n_heads = parse(key, v)?,
            "ffn_dim" => self.ffn_dim = parse(key, v)?,
            "loss.class" => self.weights.class = parse(key, v)?,
            "loss.bbox" => self.weights.bbox = parse(key, v)?,
            "loss.giou" => self.weights.giou = parse(key, v)?,
            "loss.center3d" => self.weights.center3d = parse(key, v)?,
            "loss.dim" => self.weights.dim = parse(key, v)?,
            "loss.depth" => self.weights.depth = parse(key, v)?,
            "loss.dmap" => self.weights.dmap = parse(key, v)?,
            "loss.yaw" => self.weights.yaw = parse(key, v)?,
            "cost.class" => self.costs.class = parse(key, v)?,
            "cost.bbox" => self.costs.bbox = parse(key, v)?,
            "cost.giou" => self.costs.giou = parse(key, v)?,
            "cost.center3d" => self.costs.center3d = parse(key, v)?,
            "focal_alpha" => self.focal_alpha = parse(key, v)?,
            "focal_gamma" => self.focal_gamma = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "weight_decay" => self.weight_decay = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "decay_rate" => self.decay_rate = parse(key, v)?,
            "decay_epochs" => self.decay_epochs = parse_list(key, v)?,
            "reference_epochs" => self.reference_epochs = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "aux_loss" => self.aux_loss = parse(key, v)?,
            "connector_hidden" => self.connector_hidden = parse(key, v)?,
            "gelu" => {
                self.gelu = match v.trim() {
                    "exact" => GeluKind::Exact,
                    "tanh" => GeluKind::Tanh,
                    _ => return Err(Error::Config(format!("invalid gelu '{v}' (exact|tanh)"))),
                }
            }
            "bank_dim" => self.bank_dim = parse(key, v)?,
            "dims_prior" => {
                let d: Vec<f64> = parse_list(key, v)?;
                self.dims_prior = d
                    .try_into()
                    .map_err(|_| Error::Config("dims_prior needs three values".into()))?;
            }
            "depth_prior" => self.depth_prior = parse(key, v)?,
            "fusion" => {
                let f: Vec<&str> = v.split(',').collect();
                if f.len() != 3 {
                    return Err(Error::Config("fusion needs intrinsic_aware,feature,query".into()));
                }
                self.intrinsic_aware = parse_bool(key, f[0])?;
                self.feature_fusion = parse_bool(key, f[1])?;
                self.query_fusion = parse_bool(key, f[2])?;
            }
            "source" => {
                let (s, c) = v
                    .split_once(',')
                    .ok_or_else(|| Error::Config("source needs <bank|linear-focal>,<mlp|linear>".into()))?;
                self.source = match s.trim() {
                    "bank" => IntrinsicSource::Bank,
                    "linear-focal" => IntrinsicSource::LinearFocal,
                    _ => return Err(Error::Config(format!("invalid intrinsic source '{s}'"))),
                };
                self.connector = match c.trim() {
                    "mlp" => ConnectorKind::Mlp,
                    "linear" => ConnectorKind::Linear,
                    _ => return Err(Error::Config(format!("invalid connector kind '{c}'"))),
                };
            }
            _ => return Err(Error::Config(format!("unknown detector key '{key}'"))),
        }
        Ok(())
    }

    /// Canonical `key = value` text.
    pub fn to_text(&self) -> String {
        Self::KEYS
            .iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("registered key")))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key = value, got '{line}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    /// SHA-256 of [`DetectorConfig::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn connector_hidden_width(&self) -> usize {
        if self.connector_hidden == 0 {
            self.bank_dim
        } else {
            self.connector_hidden
        }
    }

    /// Strides of the three memory scales.
    pub fn feature_strides(&self) -> [usize; 3] {
        let n = self.channels.len();
        if self.stub_scales {
            let s = 1 << n;
            [s, s, s]
        } else {
            [1 << (n - 2), 1 << (n - 1), 1 << n]
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if self.channels.len() < 3 || self.channels.contains(&0) {
            return bad("channels needs at least three positive widths (stem plus blocks)".into());
        }
        if self.d_model == 0 || self.d_model % 4 != 0 {
            return bad(format!("d_model {} must be a positive multiple of 4", self.d_model));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_queries == 0 || self.n_classes == 0 || self.ffn_dim == 0 || self.batch_size == 0 {
            return bad("n_queries, n_classes, ffn_dim and batch_size must be positive".into());
        }
        let w = &self.weights;
        let c = &self.costs;
        if [w.class, w.bbox, w.giou, w.center3d, w.dim, w.depth, w.dmap, w.yaw, c.class, c.bbox, c.giou, c.center3d]
            .iter()
            .any(|x| !(*x >= 0.0))
        {
            return bad("loss weights and match costs must be non-negative".into());
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) || !(self.depth_prior > 0.0) {
            return bad("lr and depth_prior must be positive, weight_decay non-negative".into());
        }
        if self.intrinsic_aware && self.bank_dim == 0 {
            return bad("bank_dim must be positive for an intrinsic-aware detector".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_and_hash() {
        let mut c = DetectorConfig::default();
        c.channels = vec![4, 8, 8, 16];
        c.gelu = GeluKind::Tanh;
        Ablation::NoEncoder.apply(&mut c);
        let back = DetectorConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        c.lr = 1e-3;
        assert_ne!(back.hash(), c.hash());
        assert!(DetectorConfig::from_text("nonsense = 1").is_err());
    }

    #[test]
    fn ablation_names() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
        assert!("partial".parse::<Ablation>().is_err());
        let mut c = DetectorConfig::default();
        Ablation::Baseline.apply(&mut c);
        assert!(!c.intrinsic_aware && !c.feature_fusion && !c.query_fusion);
        Ablation::NoFeatFuse.apply(&mut c);
        assert!(c.intrinsic_aware && !c.feature_fusion && c.query_fusion);
    }

    #[test]
    fn defaults_follow_hyperparameter_table() {
        let c = DetectorConfig::default();
        assert_eq!((c.d_model, c.n_queries, c.n_decoder_layers, c.n_heads), (256, 50, 3, 8));
        assert_eq!(c.weights.class, 2.0);
        assert_eq!(c.weights.bbox, 5.0);
        assert_eq!(c.weights.giou, 2.0);
        assert_eq!(c.weights.center3d, 10.0);
        assert_eq!((c.weights.dim, c.weights.depth, c.weights.dmap), (1.0, 1.0, 1.0));
        assert_eq!((c.lr, c.weight_decay, c.focal_alpha), (2e-4, 1e-4, 0.25));
        assert_eq!(c.decay_epochs, vec![85, 125, 165, 205]);
        assert_eq!(c.feature_strides(), [8, 16, 32]);
        c.validate().unwrap();
    }
}
