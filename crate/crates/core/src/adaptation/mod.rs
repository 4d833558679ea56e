//! Connector MLP and additive intrinsic fusion.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{gelu, GeluKind, Graph, ParamId, ParamSet, Var};
use crate::scalar::{gemm, Layout, Scalar};

/// Plain connector weights. Matrices are row-major `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectorParams<T> {
    pub dim: usize,
    pub hidden: usize,
    pub out: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> ConnectorParams<T> {
    pub fn zeros(dim: usize, hidden: usize, out: usize) -> Self {
        Self {
            dim,
            hidden,
            out,
            w1: vec![T::zero(); dim * hidden],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); hidden * out],
            b2: vec![T::zero(); out],
        }
    }

    /// Weights uniform in `±1/√fan_in`, zero biases.
    pub fn init<R: Rng>(dim: usize, hidden: usize, out: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(dim, hidden, out);
        let b1 = 1.0 / (dim as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        p.w1.iter_mut().for_each(|w| *w = T::c(rng.gen_range(-b1..=b1)));
        p.w2.iter_mut().for_each(|w| *w = T::c(rng.gen_range(-b2..=b2)));
        p
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.w1.len() == self.dim * self.hidden
            && self.b1.len() == self.hidden
            && self.w2.len() == self.hidden * self.out
            && self.b2.len() == self.out;
        if !ok {
            return Err(Error::Internal(format!(
                "connector buffers do not match {}→{}→{}",
                self.dim, self.hidden, self.out
            )));
        }
        if ![&self.w1, &self.b1, &self.w2, &self.b2].iter().all(|v| v.iter().all(|x| x.is_finite())) {
            return Err(Error::Internal("connector has non-finite weights".into()));
        }
        Ok(())
    }
}

/// `W2·gelu(W1·t + b1) + b2`.
pub fn connector_forward<T: Scalar>(p: &ConnectorParams<T>, t: &[T], kind: GeluKind) -> Result<Vec<T>> {
    p.validate()?;
    if t.len() != p.dim {
        return Err(Error::Internal(format!("connector expects width {}, got {}", p.dim, t.len())));
    }
    let mut h = p.b1.clone();
    gemm(1, p.dim, p.hidden, T::one(), t, Layout::N, &p.w1, Layout::N, T::one(), &mut h);
    h.iter_mut().for_each(|x| *x = gelu(*x, kind));
    let mut out = p.b2.clone();
    gemm(1, p.hidden, p.out, T::one(), &h, Layout::N, &p.w2, Layout::N, T::one(), &mut out);
    Ok(out)
}

/// One `channels × height × width` feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

/// Adds `t` at every spatial position of every map.
pub fn fuse_features<T: Scalar>(maps: &[FeatureMap<T>], t: &[T]) -> Result<Vec<FeatureMap<T>>> {
    maps.iter()
        .map(|m| {
            if m.channels != t.len() || m.data.len() != m.channels * m.height * m.width {
                return Err(Error::Internal(format!(
                    "feature map has {} channels, intrinsic vector {}",
                    m.channels,
                    t.len()
                )));
            }
            let hw = m.height * m.width;
            let mut out = m.clone();
            for (c, chunk) in out.data.chunks_mut(hw.max(1)).enumerate().take(m.channels) {
                chunk.iter_mut().for_each(|v| *v += t[c]);
            }
            Ok(out)
        })
        .collect()
}

/// Adds `t` to each of the `queries.len() / t.len()` query rows.
pub fn fuse_queries<T: Scalar>(queries: &[T], t: &[T]) -> Result<Vec<T>> {
    if t.is_empty() || queries.len() % t.len() != 0 {
        return Err(Error::Internal(format!(
            "{} query values are not rows of width {}",
            queries.len(),
            t.len()
        )));
    }
    let mut out = queries.to_vec();
    for row in out.chunks_mut(t.len()) {
        row.iter_mut().zip(t).for_each(|(q, v)| *q += *v);
    }
    Ok(out)
}

/// Connector weights living in a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Connector {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub gelu: GeluKind,
}

impl Connector {
    pub fn register<T: Scalar, R: Rng>(
        params: &mut ParamSet<T>,
        prefix: &str,
        dim: usize,
        hidden: usize,
        out: usize,
        gelu: GeluKind,
        rng: &mut R,
    ) -> Self {
        let init = ConnectorParams::<T>::init(dim, hidden, out, rng);
        Self {
            w1: params.add(format!("{prefix}.w1"), &[dim, hidden], init.w1),
            b1: params.add(format!("{prefix}.b1"), &[hidden], init.b1),
            w2: params.add(format!("{prefix}.w2"), &[hidden, out], init.w2),
            b2: params.add(format!("{prefix}.b2"), &[out], init.b2),
            gelu,
        }
    }

    /// Tape version of [`connector_forward`] over rows of `t`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamSet<T>, t: Var) -> Var {
        let (w1, b1, w2, b2) = (g.param(p, self.w1), g.param(p, self.b1), g.param(p, self.w2), g.param(p, self.b2));
        let h = g.linear(t, w1, Some(b1));
        let h = g.gelu(h, self.gelu);
        g.linear(h, w2, Some(b2))
    }

    pub fn extract<T: Scalar>(&self, p: &ParamSet<T>) -> ConnectorParams<T> {
        let s1 = p.shape(self.w1);
        let s2 = p.shape(self.w2);
        ConnectorParams {
            dim: s1[0],
            hidden: s1[1],
            out: s2[1],
            w1: p.value(self.w1).to_vec(),
            b1: p.value(self.b1).to_vec(),
            w2: p.value(self.w2).to_vec(),
            b2: p.value(self.b2).to_vec(),
        }
    }
}
