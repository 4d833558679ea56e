use crate::scalar::{gemm, Layout, Scalar};

use super::params::{ParamId, ParamSet};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GeluKind {
    /// `x·Φ(x)` with the exact error function.
    Exact,
    /// The tanh approximation.
    Tanh,
}

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        cols: Vec<T>,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<T>,
    },
    Relu(Var),
    Gelu(Var, GeluKind),
    Sigmoid(Var),
    Exp(Var),
    Scale(Var, T),
    Add(Var, Var),
    AddChannels {
        x: Var,
        t: Var,
    },
    AddRows {
        x: Var,
        t: Var,
    },
    Tile {
        x: Var,
        batch: usize,
    },
    Tokens(Var),
    Concat(Vec<Var>),
    Cols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    MixTokens {
        x: Var,
        m: Vec<T>,
    },
    External {
        inputs: Vec<Var>,
        grads: Vec<Vec<T>>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    needs_grad: bool,
    op: Op<T>,
}

/// Define-by-run reverse-mode tape. Shapes are row-major; images are
/// `[batch, channels, height, width]`, token sets `[batch, tokens, width]`.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients from one backward pass, indexed by node.
#[derive(Debug)]
pub struct Grads<T> {
    per_node: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn of(&self, v: Var) -> Option<&[T]> {
        self.per_node[v.0].as_deref()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn accumulate<T: Scalar>(slot: &mut Option<Vec<T>>, g: &[T]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += *b),
        None => *slot = Some(g.to_vec()),
    }
}

fn gelu_fwd<T: Scalar>(x: T, kind: GeluKind) -> T {
    let half = T::c(0.5);
    match kind {
        GeluKind::Exact => half * x * (T::one() + (x * T::FRAC_1_SQRT_2()).gauss_erf()),
        GeluKind::Tanh => {
            let a = T::c(0.797_884_560_802_865_4) * (x + T::c(0.044715) * x * x * x);
            half * x * (T::one() + a.tanh())
        }
    }
}

fn gelu_grad<T: Scalar>(x: T, kind: GeluKind) -> T {
    let half = T::c(0.5);
    match kind {
        GeluKind::Exact => {
            let cdf = half * (T::one() + (x * T::FRAC_1_SQRT_2()).gauss_erf());
            let pdf = (-half * x * x).exp() * T::c(0.398_942_280_401_432_7);
            cdf + x * pdf
        }
        GeluKind::Tanh => {
            let k = T::c(0.797_884_560_802_865_4);
            let c3 = T::c(0.044715);
            let t = (k * (x + c3 * x * x * x)).tanh();
            half * (T::one() + t) + half * x * (T::one() - t * t) * k * (T::one() + T::c(3.0) * c3 * x * x)
        }
    }
}

/// Applies `GELU` to a plain value.
pub fn gelu<T: Scalar>(x: T, kind: GeluKind) -> T {
    gelu_fwd(x, kind)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), numel(&shape));
        let needs_grad = match &op {
            Op::Input => false,
            Op::Param(_) => true,
            _ => self.inputs_of(&op).iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            shape,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_of(&self, op: &Op<T>) -> Vec<Var> {
        match op {
            Op::Input | Op::Param(_) => vec![],
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Linear { x, w, b } => std::iter::once(*x).chain(std::iter::once(*w)).chain(*b).collect(),
            Op::LayerNorm { x, g, b, .. } => vec![*x, *g, *b],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Relu(x) | Op::Gelu(x, _) | Op::Sigmoid(x) | Op::Exp(x) | Op::Scale(x, _) | Op::Reshape(x) => vec![*x],
            Op::Tokens(x) => vec![*x],
            Op::Add(a, b) => vec![*a, *b],
            Op::AddChannels { x, t } | Op::AddRows { x, t } => vec![*x, *t],
            Op::Tile { x, .. } | Op::Cols { x, .. } | Op::MixTokens { x, .. } => vec![*x],
            Op::Concat(v) => v.clone(),
            Op::External { inputs, .. } => inputs.clone(),
        }
    }

    /// A constant leaf.
    pub fn input(&mut self, data: Vec<T>, shape: &[usize]) -> Var {
        assert_eq!(data.len(), numel(shape), "input data does not match shape {shape:?}");
        self.push(data, shape.to_vec(), Op::Input)
    }

    /// A trainable leaf holding a copy of the parameter's current value.
    pub fn param(&mut self, params: &ParamSet<T>, id: ParamId) -> Var {
        self.push(params.value(id).to_vec(), params.shape(id).to_vec(), Op::Param(id))
    }

    /// 2D convolution; `w` is `[out, in, k, k]`, `b` is `[out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        assert!(xs.len() == 4 && ws.len() == 4, "conv2d expects 4D input and weight");
        let (bn, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], c, "conv2d channel mismatch");
        assert_eq!(ws[3], k);
        assert_eq!(self.shape(b), &[o]);
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (wd + 2 * pad - k) / stride + 1;
        let hw = ho * wo;
        let ncol = bn * hw;
        let ckk = c * k * k;
        let xv = self.value(x);
        let mut cols = vec![T::zero(); ckk * ncol];
        for ci in 0..c {
            for ki in 0..k {
                for kj in 0..k {
                    let row = (ci * k + ki) * k + kj;
                    let dst = &mut cols[row * ncol..(row + 1) * ncol];
                    for bi in 0..bn {
                        let src = &xv[(bi * c + ci) * h * wd..(bi * c + ci + 1) * h * wd];
                        for oy in 0..ho {
                            let iy = (oy * stride + ki) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let srow = &src[iy as usize * wd..(iy as usize + 1) * wd];
                            let drow = &mut dst[bi * hw + oy * wo..bi * hw + (oy + 1) * wo];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = (ox * stride + kj) as isize - pad as isize;
                                if ix >= 0 && ix < wd as isize {
                                    *d = srow[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut y2 = vec![T::zero(); o * ncol];
        gemm(o, ckk, ncol, T::one(), self.value(w), Layout::N, &cols, Layout::N, T::zero(), &mut y2);
        let bv = self.value(b);
        let mut out = vec![T::zero(); bn * o * hw];
        for bi in 0..bn {
            for oi in 0..o {
                let src = &y2[oi * ncol + bi * hw..oi * ncol + (bi + 1) * hw];
                let dst = &mut out[(bi * o + oi) * hw..(bi * o + oi + 1) * hw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = *s + bv[oi];
                }
            }
        }
        self.push(
            out,
            vec![bn, o, ho, wo],
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
                cols,
            },
        )
    }

    /// `x·w + b` over the last axis; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let din = *xs.last().expect("linear input needs an axis");
        assert_eq!(ws.len(), 2, "linear weight must be 2D");
        assert_eq!(ws[0], din, "linear width mismatch: input {din}, weight {ws:?}");
        let dout = ws[1];
        let n = numel(&xs) / din.max(1);
        let mut out = vec![T::zero(); n * dout];
        if let Some(b) = b {
            assert_eq!(self.shape(b), &[dout]);
            let bv = self.value(b);
            for row in out.chunks_mut(dout) {
                row.copy_from_slice(bv);
            }
        }
        gemm(n, din, dout, T::one(), self.value(x), Layout::N, self.value(w), Layout::N, T::one(), &mut out);
        let mut shape = xs;
        *shape.last_mut().unwrap() = dout;
        self.push(out, shape, Op::Linear { x, w, b })
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        assert_eq!(self.shape(g), &[d]);
        assert_eq!(self.shape(b), &[d]);
        let eps = T::c(1e-5);
        let n = numel(&shape) / d;
        let xv = self.value(x);
        let (gv, bv) = (self.value(g), self.value(b));
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = vec![T::zero(); n * d];
        let df = T::from_usize(d).unwrap();
        for r in 0..n {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let xh = (row[j] - mean) * rs;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gv[j] + bv[j];
            }
        }
        self.push(out, shape, Op::LayerNorm { x, g, b, xhat, rstd })
    }

    /// Multi-head scaled dot-product attention over `[batch, tokens, width]`
    /// queries, keys and values.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let qs = self.shape(q).to_vec();
        let ks = self.shape(k).to_vec();
        assert_eq!(qs.len(), 3, "attention expects [batch, tokens, width]");
        assert_eq!(ks, self.shape(v), "keys and values differ in shape");
        assert!(qs[0] == ks[0] && qs[2] == ks[2], "attention shape mismatch {qs:?} vs {ks:?}");
        let (bn, nq, d) = (qs[0], qs[1], qs[2]);
        let nk = ks[1];
        assert!(heads > 0 && d % heads == 0, "width {d} not divisible by {heads} heads");
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![T::zero(); bn * heads * nq * nk];
        let mut out = vec![T::zero(); bn * nq * d];
        let mut qh = vec![T::zero(); nq * dh];
        let mut kh = vec![T::zero(); nk * dh];
        let mut vh = vec![T::zero(); nk * dh];
        let mut oh = vec![T::zero(); nq * dh];
        for bi in 0..bn {
            for h in 0..heads {
                gather_head(&qv[bi * nq * d..(bi + 1) * nq * d], nq, d, h * dh, dh, &mut qh);
                gather_head(&kv[bi * nk * d..(bi + 1) * nk * d], nk, d, h * dh, dh, &mut kh);
                gather_head(&vv[bi * nk * d..(bi + 1) * nk * d], nk, d, h * dh, dh, &mut vh);
                let p = &mut probs[(bi * heads + h) * nq * nk..(bi * heads + h + 1) * nq * nk];
                gemm(nq, dh, nk, scale, &qh, Layout::N, &kh, Layout::T, T::zero(), p);
                for row in p.chunks_mut(nk) {
                    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                    let mut s = T::zero();
                    for e in row.iter_mut() {
                        *e = (*e - m).exp();
                        s += *e;
                    }
                    for e in row.iter_mut() {
                        *e /= s;
                    }
                }
                gemm(nq, nk, dh, T::one(), p, Layout::N, &vh, Layout::N, T::zero(), &mut oh);
                scatter_head(&oh, nq, d, h * dh, dh, &mut out[bi * nq * d..(bi + 1) * nq * d]);
            }
        }
        self.push(out, qs, Op::Attention { q, k, v, heads, probs })
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(value, shape, op)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(T::zero()), Op::Relu(x))
    }

    pub fn gelu(&mut self, x: Var, kind: GeluKind) -> Var {
        self.unary(x, |v| gelu_fwd(v, kind), Op::Gelu(x, kind))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), Op::Exp(x))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        self.unary(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push(value, shape, Op::Add(a, b))
    }

    /// Adds `t[b, c]` at every spatial position of channel `c` in image `b`.
    pub fn add_channels(&mut self, x: Var, t: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 4);
        assert_eq!(self.shape(t), &xs[..2], "channel vector mismatch");
        let hw = xs[2] * xs[3];
        let tv = self.value(t);
        let mut value = self.value(x).to_vec();
        for (i, chunk) in value.chunks_mut(hw).enumerate() {
            let s = tv[i];
            chunk.iter_mut().for_each(|v| *v += s);
        }
        self.push(value, xs, Op::AddChannels { x, t })
    }

    /// Adds `t[b, :]` to every row of `x[b, :, :]`.
    pub fn add_rows(&mut self, x: Var, t: Var) -> Var {
        let xs = self.shape(x).to_vec();
        assert_eq!(xs.len(), 3);
        assert_eq!(self.shape(t), &[xs[0], xs[2]], "row vector mismatch");
        let d = xs[2];
        let tv = self.value(t);
        let mut value = self.value(x).to_vec();
        for (bi, block) in value.chunks_mut(xs[1] * d).enumerate() {
            for row in block.chunks_mut(d) {
                row.iter_mut().zip(&tv[bi * d..(bi + 1) * d]).for_each(|(a, b)| *a += *b);
            }
        }
        self.push(value, xs, Op::AddRows { x, t })
    }

    /// Repeats `x` along a new leading batch axis.
    pub fn tile(&mut self, x: Var, batch: usize) -> Var {
        let mut shape = vec![batch];
        shape.extend_from_slice(self.shape(x));
        let xv = self.value(x);
        let mut value = Vec::with_capacity(xv.len() * batch);
        for _ in 0..batch {
            value.extend_from_slice(xv);
        }
        self.push(value, shape, Op::Tile { x, batch })
    }

    /// `[batch, c, h, w]` to `[batch, h·w, c]`.
    pub fn tokens(&mut self, x: Var) -> Var {
        let xs = self.shape(x).to_vec();
        let (bn, c, hw) = (xs[0], xs[1], xs[2] * xs[3]);
        let xv = self.value(x);
        let mut value = vec![T::zero(); xv.len()];
        for bi in 0..bn {
            for ci in 0..c {
                for p in 0..hw {
                    value[(bi * hw + p) * c + ci] = xv[(bi * c + ci) * hw + p];
                }
            }
        }
        self.push(value, vec![bn, hw, c], Op::Tokens(x))
    }

    /// Concatenates `[batch, n_i, d]` token sets along the token axis.
    pub fn concat_tokens(&mut self, parts: &[Var]) -> Var {
        let first = self.shape(parts[0]).to_vec();
        let (bn, d) = (first[0], first[2]);
        let total: usize = parts.iter().map(|p| self.shape(*p)[1]).sum();
        let mut value = Vec::with_capacity(bn * total * d);
        for bi in 0..bn {
            for p in parts {
                let s = self.shape(*p);
                assert!(s[0] == bn && s[2] == d, "concat shape mismatch");
                let n = s[1];
                value.extend_from_slice(&self.value(*p)[bi * n * d..(bi + 1) * n * d]);
            }
        }
        self.push(value, vec![bn, total, d], Op::Concat(parts.to_vec()))
    }

    /// Columns `start..end` of the last axis.
    pub fn cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let mut shape = self.shape(x).to_vec();
        let d = *shape.last().unwrap();
        assert!(start < end && end <= d);
        let value = self.value(x).chunks(d).flat_map(|r| r[start..end].iter().copied()).collect();
        *shape.last_mut().unwrap() = end - start;
        self.push(value, shape, Op::Cols { x, start })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        assert_eq!(numel(shape), self.value(x).len(), "reshape changes element count");
        let value = self.value(x).to_vec();
        self.push(value, shape.to_vec(), Op::Reshape(x))
    }

    /// Fixed linear recombination of tokens: `out[b] = m · x[b]` with `m` of
    /// shape `[rows, tokens]` and `x` of shape `[batch, tokens, width]`.
    pub fn mix_tokens(&mut self, x: Var, m: Vec<T>, rows: usize) -> Var {
        let s = self.shape(x).to_vec();
        let (bn, n, d) = (s[0], s[1], s[2]);
        assert_eq!(m.len(), rows * n, "mix matrix shape mismatch");
        let mut value = vec![T::zero(); bn * rows * d];
        let xv = self.value(x);
        for bi in 0..bn {
            gemm(rows, n, d, T::one(), &m, Layout::N, &xv[bi * n * d..], Layout::N, T::zero(), &mut value[bi * rows * d..]);
        }
        self.push(value, vec![bn, rows, d], Op::MixTokens { x, m })
    }

    /// A scalar computed outside the tape, with its gradient w.r.t. each input.
    pub fn external(&mut self, inputs: &[Var], value: T, grads: Vec<Vec<T>>) -> Var {
        assert_eq!(inputs.len(), grads.len());
        for (v, g) in inputs.iter().zip(&grads) {
            assert_eq!(self.value(*v).len(), g.len(), "external gradient length mismatch");
        }
        self.push(
            vec![value],
            vec![1],
            Op::External {
                inputs: inputs.to_vec(),
                grads,
            },
        )
    }

    /// Reverse pass from the scalar `out`.
    pub fn backward(&self, out: Var) -> Grads<T> {
        assert_eq!(self.value(out).len(), 1, "backward needs a scalar output");
        let mut g: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        g[out.0] = Some(vec![T::one()]);
        for i in (0..=out.0).rev() {
            let Some(dy) = g[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &dy, &mut g);
            g[i] = Some(dy);
        }
        Grads { per_node: g }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn backprop_node(&self, node: &Node<T>, dy: &[T], g: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Conv2d { x, w, b, stride, pad, cols } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let (bn, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
                let (o, k) = (ws[0], ws[2]);
                let (ho, wo) = (node.shape[2], node.shape[3]);
                let hw = ho * wo;
                let ncol = bn * hw;
                let ckk = c * k * k;
                let mut dy2 = vec![T::zero(); o * ncol];
                for bi in 0..bn {
                    for oi in 0..o {
                        dy2[oi * ncol + bi * hw..oi * ncol + (bi + 1) * hw]
                            .copy_from_slice(&dy[(bi * o + oi) * hw..(bi * o + oi + 1) * hw]);
                    }
                }
                if self.wants(*b) {
                    let db: Vec<T> = dy2.chunks(ncol).map(|r| r.iter().copied().sum()).collect();
                    accumulate(&mut g[b.0], &db);
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); o * ckk];
                    gemm(o, ncol, ckk, T::one(), &dy2, Layout::N, cols, Layout::T, T::zero(), &mut dw);
                    accumulate(&mut g[w.0], &dw);
                }
                if self.wants(*x) {
                    let mut dcols = vec![T::zero(); ckk * ncol];
                    gemm(ckk, o, ncol, T::one(), self.value(*w), Layout::T, &dy2, Layout::N, T::zero(), &mut dcols);
                    let mut dx = vec![T::zero(); bn * c * h * wd];
                    for ci in 0..c {
                        for ki in 0..k {
                            for kj in 0..k {
                                let row = (ci * k + ki) * k + kj;
                                let src = &dcols[row * ncol..(row + 1) * ncol];
                                for bi in 0..bn {
                                    let dst = &mut dx[(bi * c + ci) * h * wd..(bi * c + ci + 1) * h * wd];
                                    for oy in 0..ho {
                                        let iy = (oy * stride + ki) as isize - *pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for ox in 0..wo {
                                            let ix = (ox * stride + kj) as isize - *pad as isize;
                                            if ix >= 0 && ix < wd as isize {
                                                dst[iy as usize * wd + ix as usize] += src[bi * hw + oy * wo + ox];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut g[x.0], &dx);
                }
            }
            Op::Linear { x, w, b } => {
                let din = self.shape(*w)[0];
                let dout = self.shape(*w)[1];
                let n = dy.len() / dout;
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![T::zero(); dout];
                        for row in dy.chunks(dout) {
                            db.iter_mut().zip(row).for_each(|(a, r)| *a += *r);
                        }
                        accumulate(&mut g[b.0], &db);
                    }
                }
                if self.wants(*w) {
                    let mut dw = vec![T::zero(); din * dout];
                    gemm(din, n, dout, T::one(), self.value(*x), Layout::T, dy, Layout::N, T::zero(), &mut dw);
                    accumulate(&mut g[w.0], &dw);
                }
                if self.wants(*x) {
                    let mut dx = vec![T::zero(); n * din];
                    gemm(n, dout, din, T::one(), dy, Layout::N, self.value(*w), Layout::T, T::zero(), &mut dx);
                    accumulate(&mut g[x.0], &dx);
                }
            }
            Op::LayerNorm { x, g: gam, b, xhat, rstd } => {
                let d = self.shape(*gam)[0];
                let gv = self.value(*gam);
                if self.wants(*gam) || self.wants(*b) {
                    let mut dg = vec![T::zero(); d];
                    let mut db = vec![T::zero(); d];
                    for (r, row) in dy.chunks(d).enumerate() {
                        for j in 0..d {
                            dg[j] += row[j] * xhat[r * d + j];
                            db[j] += row[j];
                        }
                    }
                    if self.wants(*gam) {
                        accumulate(&mut g[gam.0], &dg);
                    }
                    if self.wants(*b) {
                        accumulate(&mut g[b.0], &db);
                    }
                }
                if self.wants(*x) {
                    let df = T::from_usize(d).unwrap();
                    let mut dx = vec![T::zero(); dy.len()];
                    for (r, row) in dy.chunks(d).enumerate() {
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dxh = row[j] * gv[j];
                            m1 += dxh;
                            m2 += dxh * xh[j];
                        }
                        m1 /= df;
                        m2 /= df;
                        for j in 0..d {
                            dx[r * d + j] = rstd[r] * (row[j] * gv[j] - m1 - xh[j] * m2);
                        }
                    }
                    accumulate(&mut g[x.0], &dx);
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let qs = self.shape(*q);
                let (bn, nq, d) = (qs[0], qs[1], qs[2]);
                let nk = self.shape(*k)[1];
                let heads = *heads;
                let dh = d / heads;
                let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = vec![T::zero(); qv.len()];
                let mut dk = vec![T::zero(); kv.len()];
                let mut dv = vec![T::zero(); vv.len()];
                let mut qh = vec![T::zero(); nq * dh];
                let mut kh = vec![T::zero(); nk * dh];
                let mut vh = vec![T::zero(); nk * dh];
                let mut doh = vec![T::zero(); nq * dh];
                let mut dp = vec![T::zero(); nq * nk];
                let mut tmp_q = vec![T::zero(); nq * dh];
                let mut tmp_k = vec![T::zero(); nk * dh];
                for bi in 0..bn {
                    for h in 0..heads {
                        let qb = bi * nq * d..(bi + 1) * nq * d;
                        let kb = bi * nk * d..(bi + 1) * nk * d;
                        gather_head(&qv[qb.clone()], nq, d, h * dh, dh, &mut qh);
                        gather_head(&kv[kb.clone()], nk, d, h * dh, dh, &mut kh);
                        gather_head(&vv[kb.clone()], nk, d, h * dh, dh, &mut vh);
                        gather_head(&dy[qb.clone()], nq, d, h * dh, dh, &mut doh);
                        let p = &probs[(bi * heads + h) * nq * nk..(bi * heads + h + 1) * nq * nk];
                        // dV = Pᵀ dO
                        gemm(nk, nq, dh, T::one(), p, Layout::T, &doh, Layout::N, T::zero(), &mut tmp_k);
                        add_head(&tmp_k, nk, d, h * dh, dh, &mut dv[kb.clone()]);
                        // dP = dO Vᵀ, then softmax backward
                        gemm(nq, dh, nk, T::one(), &doh, Layout::N, &vh, Layout::T, T::zero(), &mut dp);
                        for (prow, drow) in p.chunks(nk).zip(dp.chunks_mut(nk)) {
                            let dot: T = prow.iter().zip(drow.iter()).map(|(a, b)| *a * *b).sum();
                            for (dd, pp) in drow.iter_mut().zip(prow) {
                                *dd = *pp * (*dd - dot) * scale;
                            }
                        }
                        gemm(nq, nk, dh, T::one(), &dp, Layout::N, &kh, Layout::N, T::zero(), &mut tmp_q);
                        add_head(&tmp_q, nq, d, h * dh, dh, &mut dq[qb.clone()]);
                        gemm(nk, nq, dh, T::one(), &dp, Layout::T, &qh, Layout::N, T::zero(), &mut tmp_k);
                        add_head(&tmp_k, nk, d, h * dh, dh, &mut dk[kb]);
                    }
                }
                if self.wants(*q) {
                    accumulate(&mut g[q.0], &dq);
                }
                if self.wants(*k) {
                    accumulate(&mut g[k.0], &dk);
                }
                if self.wants(*v) {
                    accumulate(&mut g[v.0], &dv);
                }
            }
            Op::Relu(x) => {
                let dx: Vec<T> = dy
                    .iter()
                    .zip(self.value(*x))
                    .map(|(&d, &v)| if v > T::zero() { d } else { T::zero() })
                    .collect();
                accumulate(&mut g[x.0], &dx);
            }
            Op::Gelu(x, kind) => {
                let dx: Vec<T> = dy.iter().zip(self.value(*x)).map(|(&d, &v)| d * gelu_grad(v, *kind)).collect();
                accumulate(&mut g[x.0], &dx);
            }
            Op::Sigmoid(x) => {
                let dx: Vec<T> = dy.iter().zip(&node.value).map(|(&d, &s)| d * s * (T::one() - s)).collect();
                accumulate(&mut g[x.0], &dx);
            }
            Op::Exp(x) => {
                let dx: Vec<T> = dy.iter().zip(&node.value).map(|(&d, &e)| d * e).collect();
                accumulate(&mut g[x.0], &dx);
            }
            Op::Scale(x, s) => {
                let dx: Vec<T> = dy.iter().map(|&d| d * *s).collect();
                accumulate(&mut g[x.0], &dx);
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(&mut g[a.0], dy);
                }
                if self.wants(*b) {
                    accumulate(&mut g[b.0], dy);
                }
            }
            Op::AddChannels { x, t } => {
                if self.wants(*x) {
                    accumulate(&mut g[x.0], dy);
                }
                if self.wants(*t) {
                    let hw = node.shape[2] * node.shape[3];
                    let dt: Vec<T> = dy.chunks(hw).map(|c| c.iter().copied().sum()).collect();
                    accumulate(&mut g[t.0], &dt);
                }
            }
            Op::AddRows { x, t } => {
                if self.wants(*x) {
                    accumulate(&mut g[x.0], dy);
                }
                if self.wants(*t) {
                    let (n, d) = (node.shape[1], node.shape[2]);
                    let mut dt = vec![T::zero(); node.shape[0] * d];
                    for (bi, block) in dy.chunks(n * d).enumerate() {
                        for row in block.chunks(d) {
                            dt[bi * d..(bi + 1) * d].iter_mut().zip(row).for_each(|(a, r)| *a += *r);
                        }
                    }
                    accumulate(&mut g[t.0], &dt);
                }
            }
            Op::Tile { x, batch } => {
                let n = dy.len() / batch;
                let mut dx = vec![T::zero(); n];
                for chunk in dy.chunks(n) {
                    dx.iter_mut().zip(chunk).for_each(|(a, c)| *a += *c);
                }
                accumulate(&mut g[x.0], &dx);
            }
            Op::Tokens(x) => {
                let (bn, hw, c) = (node.shape[0], node.shape[1], node.shape[2]);
                let mut dx = vec![T::zero(); dy.len()];
                for bi in 0..bn {
                    for p in 0..hw {
                        for ci in 0..c {
                            dx[(bi * c + ci) * hw + p] = dy[(bi * hw + p) * c + ci];
                        }
                    }
                }
                accumulate(&mut g[x.0], &dx);
            }
            Op::Concat(parts) => {
                let (bn, total, d) = (node.shape[0], node.shape[1], node.shape[2]);
                let mut offset = 0;
                for p in parts {
                    let n = self.shape(*p)[1];
                    if self.wants(*p) {
                        let mut dp = Vec::with_capacity(bn * n * d);
                        for bi in 0..bn {
                            let start = (bi * total + offset) * d;
                            dp.extend_from_slice(&dy[start..start + n * d]);
                        }
                        accumulate(&mut g[p.0], &dp);
                    }
                    offset += n;
                }
            }
            Op::Cols { x, start } => {
                let d = *self.shape(*x).last().unwrap();
                let w = *node.shape.last().unwrap();
                let mut dx = vec![T::zero(); self.value(*x).len()];
                for (r, row) in dy.chunks(w).enumerate() {
                    dx[r * d + start..r * d + start + w].copy_from_slice(row);
                }
                accumulate(&mut g[x.0], &dx);
            }
            Op::Reshape(x) => accumulate(&mut g[x.0], dy),
            Op::MixTokens { x, m } => {
                let (bn, rows, d) = (node.shape[0], node.shape[1], node.shape[2]);
                let n = self.shape(*x)[1];
                let mut dx = vec![T::zero(); bn * n * d];
                for bi in 0..bn {
                    gemm(n, rows, d, T::one(), m, Layout::T, &dy[bi * rows * d..], Layout::N, T::zero(), &mut dx[bi * n * d..]);
                }
                accumulate(&mut g[x.0], &dx);
            }
            Op::External { inputs, grads } => {
                let s = dy[0];
                for (v, gr) in inputs.iter().zip(grads) {
                    if self.wants(*v) {
                        let scaled: Vec<T> = gr.iter().map(|&x| x * s).collect();
                        accumulate(&mut g[v.0], &scaled);
                    }
                }
            }
        }
    }

    /// Gradients of every parameter leaf, summed per parameter.
    pub fn param_grads(&self, grads: &Grads<T>, params: &ParamSet<T>) -> Vec<Option<Vec<T>>> {
        let mut out: Vec<Option<Vec<T>>> = (0..params.len()).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(gr)) = (&node.op, &grads.per_node[i]) {
                accumulate(&mut out[id.0], gr);
            }
        }
        out
    }
}

fn gather_head<T: Scalar>(src: &[T], n: usize, d: usize, off: usize, dh: usize, dst: &mut [T]) {
    for r in 0..n {
        dst[r * dh..(r + 1) * dh].copy_from_slice(&src[r * d + off..r * d + off + dh]);
    }
}

fn scatter_head<T: Scalar>(src: &[T], n: usize, d: usize, off: usize, dh: usize, dst: &mut [T]) {
    for r in 0..n {
        dst[r * d + off..r * d + off + dh].copy_from_slice(&src[r * dh..(r + 1) * dh]);
    }
}

fn add_head<T: Scalar>(src: &[T], n: usize, d: usize, off: usize, dh: usize, dst: &mut [T]) {
    for r in 0..n {
        dst[r * d + off..r * d + off + dh]
            .iter_mut()
            .zip(&src[r * dh..(r + 1) * dh])
            .for_each(|(a, b)| *a += *b);
    }
}
