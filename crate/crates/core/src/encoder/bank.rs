//! Per-focal description sets and the frozen intrinsic embedding bank.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::text::TextEncoder;

/// Descriptions of one focal length.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptionSet {
    pub focal: f64,
    pub descriptions: Vec<String>,
}

impl DescriptionSet {
    pub fn new(focal: f64, descriptions: Vec<String>) -> Result<Self> {
        let set = Self { focal, descriptions };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) {
            return Err(Error::Validation(format!("focal {} must be positive", self.focal)));
        }
        if self.descriptions.is_empty() {
            return Err(Error::Validation(format!("focal {} has no descriptions", self.focal)));
        }
        if self.descriptions.iter().any(|d| d.trim().is_empty()) {
            return Err(Error::Validation(format!("focal {} has a blank description", self.focal)));
        }
        Ok(())
    }
}

pub fn description_file_name(focal: f64) -> String {
    format!("focal_{}.txt", format_focal(focal))
}

/// Integral focals print without a fractional part.
pub fn format_focal(focal: f64) -> String {
    if focal.fract() == 0.0 && focal.abs() < 1e15 {
        format!("{}", focal as i64)
    } else {
        format!("{focal}")
    }
}

fn parse_focal_name(path: &Path) -> Option<Result<f64>> {
    let name = path.file_name()?.to_str()?;
    let stem = name.strip_prefix("focal_")?.strip_suffix(".txt")?;
    Some(match stem.parse::<f64>() {
        Ok(f) if f > 0.0 && f.is_finite() => Ok(f),
        _ => Err(Error::parse(path, format!("cannot read a focal length from `{name}`"))),
    })
}

/// Reads every `focal_<F>.txt` in `dir`, one description per line, sorted by focal.
pub fn load_descriptions(dir: &Path) -> Result<Vec<DescriptionSet>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        paths.push(entry.path());
    }
    paths.sort();
    let mut sets = Vec::new();
    for path in paths {
        let Some(focal) = parse_focal_name(&path) else {
            continue;
        };
        let focal = focal?;
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let descriptions: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect();
        if descriptions.is_empty() {
            return Err(Error::Validation(format!("{} contains no descriptions", path.display())));
        }
        sets.push(DescriptionSet { focal, descriptions });
    }
    sets.sort_by(|a, b| a.focal.total_cmp(&b.focal));
    for pair in sets.windows(2) {
        if pair[0].focal == pair[1].focal {
            return Err(Error::Validation(format!("duplicate description files for focal {}", pair[0].focal)));
        }
    }
    Ok(sets)
}

pub fn write_descriptions(dir: &Path, set: &DescriptionSet) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(description_file_name(set.focal));
    let mut body = set.descriptions.join("\n");
    body.push('\n');
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankEntry<T> {
    pub focal: f64,
    /// Norm of the averaged embedding before normalization.
    pub pre_norm: f64,
    pub vector: Vec<T>,
}

/// Sorted map from seen focal length to a unit-norm embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicEmbeddingBank<T> {
    dim: usize,
    encoder_name: String,
    entries: Vec<BankEntry<T>>,
    frozen: bool,
}

impl<T: Scalar> IntrinsicEmbeddingBank<T> {
    pub fn new(dim: usize, encoder_name: impl Into<String>) -> Self {
        Self {
            dim,
            encoder_name: encoder_name.into(),
            entries: Vec::new(),
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encoder_name(&self) -> &str {
        &self.encoder_name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn entries(&self) -> &[BankEntry<T>] {
        &self.entries
    }

    pub fn focals(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.focal).collect()
    }

    /// Exact-focal lookup.
    pub fn get(&self, focal: f64) -> Option<&[T]> {
        self.entries
            .binary_search_by(|e| e.focal.total_cmp(&focal))
            .ok()
            .map(|i| self.entries[i].vector.as_slice())
    }

    /// Inserts (or replaces) an entry, normalizing the vector to unit length.
    pub fn insert(&mut self, focal: f64, vector: Vec<T>) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen);
        }
        if vector.len() != self.dim {
            return Err(Error::Internal(format!(
                "bank vector has length {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if !(focal > 0.0 && focal.is_finite()) {
            return Err(Error::Validation(format!("bank focal {focal} must be positive")));
        }
        let norm = vector.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if !(norm > T::zero()) {
            return Err(Error::Degenerate(format!("zero embedding for focal {focal}")));
        }
        let entry = BankEntry {
            focal,
            pre_norm: norm.to_f64c(),
            vector: vector.into_iter().map(|v| v / norm).collect(),
        };
        match self.entries.binary_search_by(|e| e.focal.total_cmp(&focal)) {
            Ok(i) => self.entries[i] = entry,
            Err(i) => self.entries.insert(i, entry),
        }
        Ok(())
    }

    /// Text serialization (also the on-disk bank file).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dim {}", self.dim);
        let _ = writeln!(s, "count {}", self.entries.len());
        let _ = writeln!(s, "encoder_name {}", self.encoder_name);
        for e in &self.entries {
            let _ = write!(s, "{} {:.16e}", format_focal(e.focal), e.pre_norm);
            for v in &e.vector {
                let _ = write!(s, " {:.16e}", v.to_f64c());
            }
            s.push('\n');
        }
        s
    }

    /// SHA-256 of the serialized bank, hex encoded.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Reads a bank file; the result is frozen.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| match e {
            Error::Validation(msg) => Error::parse(path, msg),
            other => other,
        })
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Validation(m);
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad(format!("missing `{key}` header")))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_owned)
                .ok_or_else(|| bad(format!("expected `{key}` header, found `{line}`")))
        };
        let dim: usize = header("dim")?.trim().parse().map_err(|_| bad("bad dim".into()))?;
        let count: usize = header("count")?.trim().parse().map_err(|_| bad("bad count".into()))?;
        let encoder_name = header("encoder_name")?;
        let mut entries = Vec::with_capacity(count);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let nums: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let nums = nums.map_err(|e| bad(format!("bad number in bank line: {e}")))?;
            if nums.len() != dim + 2 {
                return Err(bad(format!("bank line has {} fields, expected {}", nums.len(), dim + 2)));
            }
            entries.push(BankEntry {
                focal: nums[0],
                pre_norm: nums[1],
                vector: nums[2..].iter().map(|v| T::c(*v)).collect(),
            });
        }
        if entries.len() != count {
            return Err(bad(format!("bank declares {count} entries but has {}", entries.len())));
        }
        if entries.windows(2).any(|w| !(w[0].focal < w[1].focal)) {
            return Err(bad("bank focals are not strictly increasing".into()));
        }
        Ok(Self {
            dim,
            encoder_name,
            entries,
            frozen: true,
        })
    }

    pub fn cast<U: Scalar>(&self) -> IntrinsicEmbeddingBank<U> {
        IntrinsicEmbeddingBank {
            dim: self.dim,
            encoder_name: self.encoder_name.clone(),
            entries: self
                .entries
                .iter()
                .map(|e| BankEntry {
                    focal: e.focal,
                    pre_norm: e.pre_norm,
                    vector: e.vector.iter().map(|v| U::c(v.to_f64c())).collect(),
                })
                .collect(),
            frozen: self.frozen,
        }
    }
}

/// Encodes every description, averages per focal, normalizes, and freezes.
///
/// Descriptions are summed in sorted text order so the result is bitwise
/// independent of input order.
pub fn build_bank<E: TextEncoder + ?Sized>(sets: &[DescriptionSet], enc: &E) -> Result<IntrinsicEmbeddingBank<f64>> {
    if sets.is_empty() {
        return Err(Error::Validation("no description sets to encode".into()));
    }
    let mut bank = IntrinsicEmbeddingBank::new(enc.dim(), enc.name());
    for set in sets {
        set.validate()?;
        if bank.get(set.focal).is_some() {
            return Err(Error::Validation(format!("focal {} described twice", set.focal)));
        }
        let mut texts: Vec<&str> = set.descriptions.iter().map(|d| d.trim()).collect();
        texts.sort_unstable();
        let mut sum = vec![0.0f64; enc.dim()];
        for t in &texts {
            let v = enc.encode(t)?;
            if v.len() != enc.dim() {
                return Err(Error::Internal(format!(
                    "encoder `{}` produced {} values, declared {}",
                    enc.name(),
                    v.len(),
                    enc.dim()
                )));
            }
            for (s, x) in sum.iter_mut().zip(&v) {
                *s += x;
            }
        }
        let n = texts.len() as f64;
        bank.insert(set.focal, sum.into_iter().map(|s| s / n).collect())?;
    }
    bank.freeze();
    Ok(bank)
}
