use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::Connector;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::nn::{Graph, ParamId, ParamSet, Var};
use crate::scalar::Scalar;

use super::config::{ConnectorKind, DetectorConfig, IntrinsicSource};
use super::loss::PredView;

#[derive(Clone, Copy, Debug, PartialEq)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Attn {
    q: Dense,
    k: Dense,
    v: Dense,
    o: Dense,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct DecoderLayer {
    self_attn: Attn,
    norm1: Norm,
    cross_attn: Attn,
    norm2: Norm,
    ffn1: Dense,
    ffn2: Dense,
    norm3: Norm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ConnectorLayout {
    Mlp(Connector),
    Linear(Dense),
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct IntrinsicLayout {
    focal_encoder: Option<Dense>,
    connector: ConnectorLayout,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    backbone: Vec<Conv>,
    /// Indices into `backbone` whose outputs feed the three scales.
    taps: [usize; 3],
    proj: [Conv; 3],
    level: [ParamId; 3],
    dmap: Conv,
    queries: ParamId,
    layers: Vec<DecoderLayer>,
    class_head: Dense,
    box_head: Dense,
    center_head: Dense,
    dims_head: Dense,
    yaw_head: Dense,
    intrinsic: Option<IntrinsicLayout>,
}

/// Trainable detector: configuration, parameters and step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectorState<T> {
    pub config: DetectorConfig,
    pub params: ParamSet<T>,
    pub step: u64,
    layout: Layout,
}

/// How the intrinsic embedding for each image of a batch is supplied.
#[derive(Clone, Copy, Debug)]
pub enum Conditioning<'a> {
    /// Intrinsic-blind forward.
    None,
    /// One bank vector per image, passed through the connector.
    Bank(&'a [Vec<f64>]),
    /// One nominal focal per image, encoded by the trainable linear layer.
    Focal(&'a [f64]),
    /// Ready-made `t_intr` per image, bypassing the connector.
    Intrinsic(&'a [Vec<f64>]),
}

/// Which optional code paths a forward pass took.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct ForwardTrace {
    pub bank_read: bool,
    pub focal_encoder: bool,
    pub connector_mlp: bool,
    pub connector_linear: bool,
    pub feature_fusion: bool,
    pub query_fusion: bool,
}

/// Output nodes of one batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOut {
    pub batch: usize,
    /// `[batch, queries, classes + 1]`.
    pub logits: Var,
    /// Normalized `(cx, cy, w, h)`.
    pub boxes: Var,
    /// Normalized projected 3D center.
    pub center: Var,
    /// Meters.
    pub depth: Var,
    pub dims: Var,
    /// Unnormalized `(sin 2α, cos 2α)` of the observation angle.
    pub yaw: Var,
    /// Per stride-32 cell depth, meters.
    pub dmap: Var,
    /// Head outputs of the earlier decoder layers, in the order of [`Self::vars`]
    /// without the depth map.
    pub aux: Vec<[Var; 6]>,
    pub t_intr: Option<Var>,
    pub trace: ForwardTrace,
}

impl ForwardOut {
    pub fn vars(&self) -> [Var; 7] {
        [self.logits, self.boxes, self.center, self.depth, self.dims, self.yaw, self.dmap]
    }
}

struct HeadInputs {
    ref4: Var,
    ref2: Var,
}

/// Forward outputs copied out of a graph as `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchOutputs {
    pub batch: usize,
    pub n_queries: usize,
    pub bufs: [Vec<f64>; 7],
}

impl BatchOutputs {
    pub fn collect<T: Scalar>(g: &Graph<T>, out: &ForwardOut, n_queries: usize) -> Self {
        Self::from_vars(g, out.batch, n_queries, out.vars())
    }

    pub fn from_vars<T: Scalar>(g: &Graph<T>, batch: usize, n_queries: usize, vars: [Var; 7]) -> Self {
        let bufs = vars.map(|v| g.value(v).iter().map(|x| x.to_f64c()).collect::<Vec<f64>>());
        Self {
            batch,
            n_queries,
            bufs,
        }
    }

    pub fn view(&self, i: usize) -> PredView<'_> {
        let part = |k: usize| {
            let n = self.bufs[k].len() / self.batch;
            &self.bufs[k][i * n..(i + 1) * n]
        };
        PredView {
            n_queries: self.n_queries,
            logits: part(0),
            boxes: part(1),
            center: part(2),
            depth: part(3),
            dims: part(4),
            yaw: part(5),
            dmap: part(6),
        }
    }
}

fn conv_out(n: usize, stride: usize) -> usize {
    (n + 2 - 3) / stride + 1
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Normalized anchor of each query on a grid matching the image aspect.
pub fn reference_points(n: usize, width: usize, height: usize) -> Vec<[f64; 2]> {
    let aspect = width as f64 / height as f64;
    let cols = ((n as f64 * aspect).sqrt().ceil() as usize).clamp(1, n);
    let rows = n.div_ceil(cols);
    (0..n)
        .map(|i| {
            let (r, c) = (i / cols, i % cols);
            [(c as f64 + 0.5) / cols as f64, (r as f64 + 0.5) / rows as f64]
        })
        .collect()
}

/// Sinusoidal encoding of a normalized point: `d/4` frequencies per axis.
pub fn position_encoding(x: f64, y: f64, d: usize) -> Vec<f64> {
    let n = d / 4;
    let mut out = Vec::with_capacity(d);
    for v in [x, y] {
        for k in 0..n {
            let w = std::f64::consts::PI * 64f64.powf(if n > 1 { k as f64 / (n - 1) as f64 } else { 0.0 });
            out.push((w * v).sin());
            out.push((w * v).cos());
        }
    }
    out
}

/// Bilinear weights reading each reference point from every scale, averaged
/// over scales: shape `[points, Σ h·w]` over the concatenated token sets.
pub fn sampling_matrix<T: Scalar>(refs: &[[f64; 2]], sizes: &[(usize, usize)]) -> Vec<T> {
    let total: usize = sizes.iter().map(|(h, w)| h * w).sum();
    let mut m = vec![T::zero(); refs.len() * total];
    let share = 1.0 / sizes.len() as f64;
    for (i, r) in refs.iter().enumerate() {
        let mut offset = 0;
        for &(h, w) in sizes {
            let x = (r[0] * w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
            let y = (r[1] * h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
            let (x0, y0) = (x.floor() as usize, y.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
            let (fx, fy) = (x - x0 as f64, y - y0 as f64);
            for (yy, xx, wt) in [
                (y0, x0, (1.0 - fx) * (1.0 - fy)),
                (y0, x1, fx * (1.0 - fy)),
                (y1, x0, (1.0 - fx) * fy),
                (y1, x1, fx * fy),
            ] {
                m[i * total + offset + yy * w + xx] += T::c(share * wt);
            }
            offset += h * w;
        }
    }
    m
}

struct Builder<'a, T> {
    p: &'a mut ParamSet<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize) -> Conv {
        let fan_in = (cin * k * k) as f64;
        Conv {
            w: self.p.uniform(format!("{name}.w"), &[cout, cin, k, k], (6.0 / fan_in).sqrt(), self.rng),
            b: self.p.zeros(format!("{name}.b"), &[cout]),
            stride,
            pad: k / 2,
        }
    }

    fn dense(&mut self, name: &str, din: usize, dout: usize) -> Dense {
        Dense {
            w: self.p.uniform(format!("{name}.w"), &[din, dout], (6.0 / (din + dout) as f64).sqrt(), self.rng),
            b: self.p.zeros(format!("{name}.b"), &[dout]),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.p.filled(format!("{name}.g"), &[d], T::one()),
            b: self.p.zeros(format!("{name}.b"), &[d]),
        }
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        Attn {
            q: self.dense(&format!("{name}.q"), d, d),
            k: self.dense(&format!("{name}.k"), d, d),
            v: self.dense(&format!("{name}.v"), d, d),
            o: self.dense(&format!("{name}.o"), d, d),
        }
    }
}

impl<T: Scalar> DetectorState<T> {
    /// Fresh parameters. Shared weights depend only on `seed` and the shared
    /// architecture, so intrinsic-aware and blind variants start identical.
    pub fn new(config: DetectorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut b = Builder {
            p: &mut params,
            rng: &mut rng,
        };
        let mut backbone = Vec::new();
        let mut block_out = Vec::new();
        let mut cin = 3;
        for (i, &c) in config.channels.iter().enumerate() {
            backbone.push(b.conv(&format!("backbone.{i}.down"), cin, c, 3, 2));
            for j in 0..if i == 0 { 0 } else { config.block_depth } {
                backbone.push(b.conv(&format!("backbone.{i}.conv{j}"), c, c, 3, 1));
            }
            block_out.push(backbone.len() - 1);
            cin = c;
        }
        let n = config.channels.len();
        let taps = if config.stub_scales {
            [block_out[n - 1]; 3]
        } else {
            [block_out[n - 3], block_out[n - 2], block_out[n - 1]]
        };
        let tap_ch = if config.stub_scales {
            [config.channels[n - 1]; 3]
        } else {
            [config.channels[n - 3], config.channels[n - 2], config.channels[n - 1]]
        };
        let proj = [0, 1, 2].map(|i| b.conv(&format!("proj.{i}"), tap_ch[i], d, 1, 1));
        let level = [0, 1, 2].map(|i| b.p.uniform(format!("level.{i}"), &[d], 0.1, b.rng));
        let dmap = b.conv("dmap", d, 1, 1, 1);
        b.p.value_mut(dmap.b)[0] = T::c(config.depth_prior.ln());
        let queries = b.p.uniform("queries", &[config.n_queries, d], 1.0, b.rng);
        let layers = (0..config.n_decoder_layers)
            .map(|l| DecoderLayer {
                self_attn: b.attn(&format!("dec.{l}.self"), d),
                norm1: b.norm(&format!("dec.{l}.norm1"), d),
                cross_attn: b.attn(&format!("dec.{l}.cross"), d),
                norm2: b.norm(&format!("dec.{l}.norm2"), d),
                ffn1: b.dense(&format!("dec.{l}.ffn1"), d, config.ffn_dim),
                ffn2: b.dense(&format!("dec.{l}.ffn2"), config.ffn_dim, d),
                norm3: b.norm(&format!("dec.{l}.norm3"), d),
            })
            .collect();
        let class_head = b.dense("head.class", d, config.n_classes + 1);
        let prior = T::c(-((1.0 - 0.01f64) / 0.01).ln());
        b.p.value_mut(class_head.b).iter_mut().for_each(|v| *v = prior);
        let box_head = b.dense("head.box", d, 4);
        b.p.value_mut(box_head.b)[2] = T::c(-2.0);
        b.p.value_mut(box_head.b)[3] = T::c(-2.0);
        let center_head = b.dense("head.center", d, 3);
        b.p.value_mut(center_head.b)[2] = T::c(config.depth_prior.ln());
        let dims_head = b.dense("head.dims", d, 3);
        for k in 0..3 {
            b.p.value_mut(dims_head.b)[k] = T::c(config.dims_prior[k].ln());
        }
        let yaw_head = b.dense("head.yaw", d, 2);

        let intrinsic = if config.intrinsic_aware {
            let mut irng = ChaCha8Rng::seed_from_u64(seed);
            irng.set_stream(1);
            let bank_dim = config.bank_dim;
            let focal_encoder = (config.source == IntrinsicSource::LinearFocal).then(|| Dense {
                w: params.uniform("focal_encoder.w", &[1, bank_dim], 1.0, &mut irng),
                b: params.uniform("focal_encoder.b", &[bank_dim], 1.0, &mut irng),
            });
            let connector = match config.connector {
                ConnectorKind::Mlp => ConnectorLayout::Mlp(Connector::register(
                    &mut params,
                    "connector",
                    bank_dim,
                    config.connector_hidden_width(),
                    d,
                    config.gelu,
                    &mut irng,
                )),
                ConnectorKind::Linear => {
                    let bound = 1.0 / (bank_dim as f64).sqrt();
                    ConnectorLayout::Linear(Dense {
                        w: params.uniform("connector.linear.w", &[bank_dim, d], bound, &mut irng),
                        b: params.zeros("connector.linear.b", &[d]),
                    })
                }
            };
            Some(IntrinsicLayout {
                focal_encoder,
                connector,
            })
        } else {
            None
        };
        Ok(Self {
            config,
            params,
            step: 0,
            layout: Layout {
                backbone,
                taps,
                proj,
                level,
                dmap,
                queries,
                layers,
                class_head,
                box_head,
                center_head,
                dims_head,
                yaw_head,
                intrinsic,
            },
        })
    }

    /// Parameters excluded from weight decay (biases, norms, embeddings).
    pub fn no_decay_mask(&self) -> Vec<bool> {
        self.params
            .ids()
            .map(|id| {
                let n = self.params.name(id);
                self.params.shape(id).len() == 1 || n.starts_with("queries") || n.starts_with("level")
            })
            .collect()
    }

    /// Map of the stride-32 depth cells: `(rows, cols)`.
    pub fn dmap_grid(&self) -> (usize, usize) {
        let (mut h, mut w) = (self.config.height, self.config.width);
        for _ in 0..self.config.channels.len() {
            h = conv_out(h, 2);
            w = conv_out(w, 2);
        }
        (h, w)
    }

    /// Sizes of the three memory scales.
    fn scale_sizes(&self) -> [(usize, usize); 3] {
        let mut sizes = Vec::new();
        let (mut h, mut w) = (self.config.height, self.config.width);
        for _ in 0..self.config.channels.len() {
            h = conv_out(h, 2);
            w = conv_out(w, 2);
            sizes.push((h, w));
        }
        let n = sizes.len();
        if self.config.stub_scales {
            [sizes[n - 1]; 3]
        } else {
            [sizes[n - 3], sizes[n - 2], sizes[n - 1]]
        }
    }

    fn dense(&self, g: &mut Graph<T>, x: Var, d: Dense) -> Var {
        let w = g.param(&self.params, d.w);
        let b = g.param(&self.params, d.b);
        g.linear(x, w, Some(b))
    }

    fn norm(&self, g: &mut Graph<T>, x: Var, n: Norm) -> Var {
        let gm = g.param(&self.params, n.g);
        let b = g.param(&self.params, n.b);
        g.layer_norm(x, gm, b)
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, c: Conv) -> Var {
        let w = g.param(&self.params, c.w);
        let b = g.param(&self.params, c.b);
        g.conv2d(x, w, b, c.stride, c.pad)
    }

    fn attention(&self, g: &mut Graph<T>, q_in: Var, k_in: Var, v_in: Var, a: Attn) -> Var {
        let q = self.dense(g, q_in, a.q);
        let k = self.dense(g, k_in, a.k);
        let v = self.dense(g, v_in, a.v);
        let o = g.attention(q, k, v, self.config.n_heads);
        self.dense(g, o, a.o)
    }

    /// Builds `t_intr` rows `[batch, d']` for the given conditioning.
    fn intrinsic(&self, g: &mut Graph<T>, cond: Conditioning<'_>, batch: usize, trace: &mut ForwardTrace) -> Result<Option<Var>> {
        let lay = match (&self.layout.intrinsic, cond) {
            (None, Conditioning::None) => return Ok(None),
            (None, _) => {
                return Err(Error::Config("intrinsic-blind detector received an intrinsic input".into()));
            }
            (Some(_), Conditioning::None) => {
                return Err(Error::Config("intrinsic-aware detector needs an intrinsic input".into()));
            }
            (Some(l), _) => *l,
        };
        let d = self.config.d_model;
        let bank_dim = self.config.bank_dim;
        let check_len = |n: usize| {
            if n != batch {
                Err(Error::Internal(format!("{n} intrinsic inputs for a batch of {batch}")))
            } else {
                Ok(())
            }
        };
        let t_avg = match cond {
            Conditioning::Intrinsic(rows) => {
                check_len(rows.len())?;
                let mut data = Vec::with_capacity(batch * d);
                for r in rows {
                    if r.len() != d {
                        return Err(Error::Internal(format!("t_intr has width {}, expected {d}", r.len())));
                    }
                    data.extend(r.iter().map(|v| T::c(*v)));
                }
                return Ok(Some(g.input(data, &[batch, d])));
            }
            Conditioning::Bank(rows) => {
                check_len(rows.len())?;
                if lay.focal_encoder.is_some() {
                    return Err(Error::Config("this detector encodes raw focals, not bank vectors".into()));
                }
                trace.bank_read = true;
                let mut data = Vec::with_capacity(batch * bank_dim);
                for r in rows {
                    if r.len() != bank_dim {
                        return Err(Error::Config(format!(
                            "bank vector has width {}, detector expects {bank_dim}",
                            r.len()
                        )));
                    }
                    data.extend(r.iter().map(|v| T::c(*v)));
                }
                g.input(data, &[batch, bank_dim])
            }
            Conditioning::Focal(focals) => {
                check_len(focals.len())?;
                let enc = lay
                    .focal_encoder
                    .ok_or_else(|| Error::Config("this detector reads bank vectors, not raw focals".into()))?;
                trace.focal_encoder = true;
                let x = g.input(focals.iter().map(|f| T::c(f / 1000.0)).collect(), &[batch, 1]);
                self.dense(g, x, enc)
            }
            Conditioning::None => unreachable!(),
        };
        let t = match lay.connector {
            ConnectorLayout::Mlp(c) => {
                trace.connector_mlp = true;
                c.forward(g, &self.params, t_avg)
            }
            ConnectorLayout::Linear(l) => {
                trace.connector_linear = true;
                self.dense(g, t_avg, l)
            }
        };
        Ok(Some(t))
    }

    /// Connector output for one bank vector.
    pub fn adapt(&self, bank_vector: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let mut trace = ForwardTrace::default();
        let rows = [bank_vector.to_vec()];
        let t = self
            .intrinsic(&mut g, Conditioning::Bank(&rows), 1, &mut trace)?
            .ok_or_else(|| Error::Config("intrinsic-blind detector has no connector".into()))?;
        Ok(g.value(t).iter().map(|v| v.to_f64c()).collect())
    }

    /// Batched forward pass on `[0, 1]` images of the configured size.
    pub fn forward(&self, g: &mut Graph<T>, images: &[&Image<f32>], cond: Conditioning<'_>) -> Result<ForwardOut> {
        let cfg = &self.config;
        let batch = images.len();
        if batch == 0 {
            return Err(Error::Internal("empty batch".into()));
        }
        let mut data = Vec::with_capacity(batch * 3 * cfg.width * cfg.height);
        for img in images {
            if img.width != cfg.width || img.height != cfg.height || img.channels != 3 {
                return Err(Error::Config(format!(
                    "image is {}x{}x{}, detector expects {}x{}x3",
                    img.width, img.height, img.channels, cfg.width, cfg.height
                )));
            }
            data.extend(img.to_chw().into_iter().map(|v| T::c(v as f64 - 0.5)));
        }
        let mut trace = ForwardTrace::default();
        let t_intr = self.intrinsic(g, cond, batch, &mut trace)?;

        let mut x = g.input(data, &[batch, 3, cfg.height, cfg.width]);
        let mut taps = Vec::new();
        for (i, c) in self.layout.backbone.iter().enumerate() {
            let y = self.conv(g, x, *c);
            x = g.relu(y);
            if self.layout.taps.contains(&i) {
                taps.push((i, x));
            }
        }
        let tap_var = |i: usize| taps.iter().find(|(j, _)| *j == i).unwrap().1;

        let d = cfg.d_model;
        let sizes = self.scale_sizes();
        let mut mem_parts = Vec::new();
        let mut pos_data = Vec::new();
        let mut deepest = None;
        for s in 0..3 {
            let f = tap_var(self.layout.taps[s]);
            let mut p = self.conv(g, f, self.layout.proj[s]);
            if let (Some(t), true) = (t_intr, cfg.feature_fusion) {
                p = g.add_channels(p, t);
                trace.feature_fusion = true;
            }
            if s == 2 {
                deepest = Some(p);
            }
            let tok = g.tokens(p);
            let lv = g.param(&self.params, self.layout.level[s]);
            let lv = g.tile(lv, batch);
            mem_parts.push(g.add_rows(tok, lv));
            let (h, w) = sizes[s];
            for r in 0..h {
                for c in 0..w {
                    pos_data.extend(position_encoding((c as f64 + 0.5) / w as f64, (r as f64 + 0.5) / h as f64, d));
                }
            }
        }
        let mem = g.concat_tokens(&mem_parts);
        let n_mem = g.shape(mem)[1];
        let pos_one: Vec<T> = pos_data.iter().map(|v| T::c(*v)).collect();
        let mut pos_all = Vec::with_capacity(batch * pos_one.len());
        for _ in 0..batch {
            pos_all.extend_from_slice(&pos_one);
        }
        let mpos = g.input(pos_all, &[batch, n_mem, d]);
        let mkey = g.add(mem, mpos);

        let dm = self.conv(g, deepest.unwrap(), self.layout.dmap);
        let dmap = g.exp(dm);

        let nq = cfg.n_queries;
        let refs = reference_points(nq, cfg.width, cfg.height);
        let mut qpos = Vec::with_capacity(batch * nq * d);
        let mut ref4 = Vec::with_capacity(batch * nq * 4);
        let mut ref2 = Vec::with_capacity(batch * nq * 2);
        for _ in 0..batch {
            for r in &refs {
                qpos.extend(position_encoding(r[0], r[1], d).into_iter().map(T::c));
                ref4.extend([T::c(logit(r[0])), T::c(logit(r[1])), T::zero(), T::zero()]);
                ref2.extend([T::c(logit(r[0])), T::c(logit(r[1]))]);
            }
        }
        let qpos = g.input(qpos, &[batch, nq, d]);
        let q0 = g.param(&self.params, self.layout.queries);
        let q0 = g.tile(q0, batch);
        let local = g.mix_tokens(mem, sampling_matrix(&refs, &sizes), nq);
        let mut q = g.add(q0, local);
        if let (Some(t), true) = (t_intr, cfg.query_fusion) {
            q = g.add_rows(q, t);
            trace.query_fusion = true;
        }
        let heads_in = HeadInputs {
            ref4: g.input(ref4, &[batch, nq, 4]),
            ref2: g.input(ref2, &[batch, nq, 2]),
        };
        let mut aux = Vec::new();
        let n_layers = self.layout.layers.len();
        for (li, l) in self.layout.layers.iter().enumerate() {
            let qk = g.add(q, qpos);
            let sa = self.attention(g, qk, qk, q, l.self_attn);
            let r = g.add(q, sa);
            q = self.norm(g, r, l.norm1);
            let cq = g.add(q, qpos);
            let ca = self.attention(g, cq, mkey, mem, l.cross_attn);
            let r = g.add(q, ca);
            q = self.norm(g, r, l.norm2);
            let h = self.dense(g, q, l.ffn1);
            let h = g.relu(h);
            let f = self.dense(g, h, l.ffn2);
            let r = g.add(q, f);
            q = self.norm(g, r, l.norm3);
            if cfg.aux_loss && li + 1 < n_layers {
                aux.push(self.heads(g, q, &heads_in));
            }
        }
        let [logits, boxes, center, depth, dims, yaw] = self.heads(g, q, &heads_in);
        Ok(ForwardOut {
            batch,
            logits,
            boxes,
            center,
            depth,
            dims,
            yaw,
            dmap,
            aux,
            t_intr,
            trace,
        })
    }

    fn heads(&self, g: &mut Graph<T>, q: Var, h: &HeadInputs) -> [Var; 6] {
        let logits = self.dense(g, q, self.layout.class_head);
        let braw = self.dense(g, q, self.layout.box_head);
        let braw = g.add(braw, h.ref4);
        let boxes = g.sigmoid(braw);
        let craw = self.dense(g, q, self.layout.center_head);
        let uv = g.cols(craw, 0, 2);
        let uv = g.add(uv, h.ref2);
        let center = g.sigmoid(uv);
        let z = g.cols(craw, 2, 3);
        let depth = g.exp(z);
        let draw = self.dense(g, q, self.layout.dims_head);
        let dims = g.exp(draw);
        let yaw = self.dense(g, q, self.layout.yaw_head);
        [logits, boxes, center, depth, dims, yaw]
    }

    /// Copies shared (non-intrinsic) weights from `other`.
    pub fn copy_shared_from(&mut self, other: &DetectorState<T>) -> Result<()> {
        for id in self.params.ids().collect::<Vec<_>>() {
            let name = self.params.name(id).to_string();
            if name.starts_with("connector") || name.starts_with("focal_encoder") {
                continue;
            }
            let src = other
                .params
                .find(&name)
                .ok_or_else(|| Error::Validation(format!("missing shared parameter {name}")))?;
            self.params.value_mut(id).copy_from_slice(other.params.value(src));
        }
        Ok(())
    }

    /// Randomizes every parameter slightly (used to exercise code paths in tests).
    pub fn perturb(&mut self, scale: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in self.params.ids().collect::<Vec<_>>() {
            for v in self.params.value_mut(id) {
                *v += T::c(rng.gen_range(-scale..=scale));
            }
        }
    }

    pub fn cast<U: Scalar>(&self) -> DetectorState<U> {
        DetectorState {
            config: self.config.clone(),
            params: self.params.cast(),
            step: self.step,
            layout: self.layout.clone(),
        }
    }
}
