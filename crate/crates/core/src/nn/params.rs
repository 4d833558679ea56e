use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, shaped parameter tensors.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<T> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], value: Vec<T>) -> ParamId {
        let name = name.into();
        assert_eq!(value.len(), shape.iter().product::<usize>(), "parameter {name} has wrong size");
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.shapes.push(shape.to_vec());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn filled(&mut self, name: impl Into<String>, shape: &[usize], v: T) -> ParamId {
        self.add(name, shape, vec![v; shape.iter().product()])
    }

    /// Uniform in `±bound`.
    pub fn uniform<R: Rng>(&mut self, name: impl Into<String>, shape: &[usize], bound: f64, rng: &mut R) -> ParamId {
        let n = shape.iter().product();
        let v = (0..n).map(|_| T::c(rng.gen_range(-bound..=bound))).collect();
        self.add(name, shape, v)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[T] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn total_len(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self
                .values
                .iter()
                .map(|v| v.iter().map(|x| U::c(x.to_f64c())).collect())
                .collect(),
        }
    }

    /// Replaces values from `other`, matching by name and shape.
    pub fn load_from(&mut self, other: &ParamSet<T>) -> Result<()> {
        for id in self.ids().collect::<Vec<_>>() {
            let name = self.names[id.0].clone();
            let src = other
                .find(&name)
                .ok_or_else(|| Error::Validation(format!("missing parameter {name}")))?;
            if other.shape(src) != self.shape(id) {
                return Err(Error::Validation(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    other.shape(src),
                    self.shape(id)
                )));
            }
            self.values[id.0].copy_from_slice(other.value(src));
        }
        if other.len() != self.len() {
            return Err(Error::Validation(format!(
                "parameter count {} differs from expected {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }
}
