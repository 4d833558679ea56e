//! Text encoders: the deterministic hashed reference encoder and an adapter
//! for an external embedding command.

use std::io::Write;
use std::process::{Command, Stdio};

use crate::error::{Error, Result};

/// Maps text to a fixed-width vector. Implementations must be deterministic.
pub trait TextEncoder {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

/// SplitMix64 stream.
#[derive(Clone, Debug)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-1, 1)`.
    pub fn next_signed(&mut self) -> f64 {
        let u = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        2.0 * u - 1.0
    }
}

/// FNV-1a, 64 bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

const NUMERIC_KEY: &str = "\u{0}numeric-direction";

/// Bag-of-tokens encoder with a smooth numeric channel.
///
/// Each word token contributes a pseudo-random vector in `[-1, 1]^dim`
/// seeded by its hash. Tokens that parse as numbers contribute
/// `value / 1000` times a fixed direction instead, so texts differing only
/// in their numbers land on a line and nearby values stay correlated. The
/// sum is L2-normalized.
#[derive(Clone, Debug)]
pub struct ReferenceEncoder {
    dim: usize,
    name: String,
    direction: Vec<f64>,
}

impl ReferenceEncoder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 8 {
            return Err(Error::Config(format!("reference encoder needs dim >= 8, got {dim}")));
        }
        Ok(Self {
            dim,
            name: format!("reference-{dim}"),
            direction: token_vector(NUMERIC_KEY, dim),
        })
    }
}

fn token_vector(token: &str, dim: usize) -> Vec<f64> {
    let mut rng = SplitMix64::new(fnv1a64(token.as_bytes()));
    (0..dim).map(|_| rng.next_signed()).collect()
}

/// Lowercased whitespace tokens with surrounding punctuation stripped.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().filter_map(|raw| {
        let t = raw
            .trim_matches(|c: char| !(c.is_alphanumeric() || c == '.' || c == '-' || c == '+'))
            .trim_end_matches('.')
            .to_lowercase();
        (!t.is_empty()).then_some(t)
    })
}

fn as_number(token: &str) -> Option<f64> {
    let v: f64 = token.parse().ok()?;
    v.is_finite().then_some(v)
}

impl TextEncoder for ReferenceEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        for tok in tokenize(text) {
            if let Some(v) = as_number(&tok) {
                let w = v / 1000.0;
                for (a, d) in acc.iter_mut().zip(&self.direction) {
                    *a += w * d;
                }
            } else {
                for (a, t) in acc.iter_mut().zip(token_vector(&tok, self.dim)) {
                    *a += t;
                }
            }
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(acc)
    }
}

/// Runs `sh -c <command>` per text: the text goes to stdin, `dim`
/// whitespace-separated floats are read back from stdout.
#[derive(Clone, Debug)]
pub struct ExternalEncoder {
    command: String,
    dim: usize,
    name: String,
}

impl ExternalEncoder {
    pub fn new(command: impl Into<String>, dim: usize) -> Self {
        let command = command.into();
        Self {
            name: format!("external:{command}"),
            command,
            dim,
        }
    }
}

impl TextEncoder for ExternalEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::io(&self.command, e))?;
        child
            .stdin
            .take()
            .expect("piped stdin")
            .write_all(text.as_bytes())
            .map_err(|e| Error::io(&self.command, e))?;
        let out = child.wait_with_output().map_err(|e| Error::io(&self.command, e))?;
        if !out.status.success() {
            return Err(Error::Config(format!("encoder command `{}` failed: {}", self.command, out.status)));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            String::from_utf8_lossy(&out.stdout).split_whitespace().map(str::parse).collect();
        let v = parsed.map_err(|e| Error::parse(&self.command, format!("bad float from encoder: {e}")))?;
        if v.len() != self.dim {
            return Err(Error::Internal(format!(
                "encoder `{}` returned {} values, expected {}",
                self.command,
                v.len(),
                self.dim
            )));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cos(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn bag_of_tokens_is_order_free_and_deterministic() {
        let e = ReferenceEncoder::new(32).unwrap();
        assert_eq!(e.encode("a b").unwrap(), e.encode("b a").unwrap());
        let x = e.encode("focal 900 narrow").unwrap();
        assert_eq!(x, e.encode("focal 900 narrow").unwrap());
        let n: f64 = x.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearby_numbers_are_more_similar() {
        let e = ReferenceEncoder::new(64).unwrap();
        let a = e.encode("focal 900 narrow").unwrap();
        let b = e.encode("focal 920 narrow").unwrap();
        let c = e.encode("focal 1300 narrow").unwrap();
        assert!(cos(&a, &b) > cos(&a, &c));
    }

    #[test]
    fn rejects_tiny_dim() {
        assert!(ReferenceEncoder::new(7).is_err());
    }

    #[test]
    fn tokenizer_strips_punctuation() {
        let toks: Vec<_> = tokenize("Wide, (900) px.").collect();
        assert_eq!(toks, ["wide", "900", "px"]);
    }

    #[test]
    fn external_encoder_round_trip() {
        let e = ExternalEncoder::new("cat >/dev/null; echo 1 2 3", 3);
        assert_eq!(e.encode("anything").unwrap(), vec![1.0, 2.0, 3.0]);
        let bad = ExternalEncoder::new("cat >/dev/null; echo 1 2", 3);
        assert!(matches!(bad.encode("x"), Err(Error::Internal(_))));
    }
}
