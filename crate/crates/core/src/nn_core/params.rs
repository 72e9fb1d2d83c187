use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mat::Mat;
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Mat) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Entries drawn from `U(-bound, bound)`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        bound: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let m = Mat::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound));
        self.add(name, m)
    }

    pub fn add_const(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Mat::from_vec(rows, cols, vec![v; rows * cols]))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, p: ParamId) -> &Mat {
        &self.values[p.0]
    }

    pub fn get_mut(&mut self, p: ParamId) -> &mut Mat {
        &mut self.values[p.0]
    }

    pub fn name(&self, p: ParamId) -> &str {
        &self.names[p.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if self.names != other.names {
            return Err(NnError::ShapeMismatch("parameter names differ".into()));
        }
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if a.shape() != b.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "{}: {:?} vs {:?}",
                    self.names[i],
                    a.shape(),
                    b.shape()
                )));
            }
        }
        self.values.clone_from(&other.values);
        Ok(())
    }
}

/// Gradients per parameter; unused parameters stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    mats: Vec<Option<Mat>>,
}

impl Grads {
    pub fn new(n: usize) -> Self {
        Self { mats: vec![None; n] }
    }

    pub fn get(&self, p: ParamId) -> Option<&Mat> {
        self.mats[p.0].as_ref()
    }

    pub fn accumulate(&mut self, p: ParamId, g: Mat) {
        match &mut self.mats[p.0] {
            Some(m) => m.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Adds `other` into `self` parameter by parameter.
    pub fn merge(&mut self, other: Grads) {
        assert_eq!(self.mats.len(), other.mats.len());
        for (i, g) in other.mats.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for m in self.mats.iter_mut().flatten() {
            m.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.mats.iter().flatten().map(Mat::sum_sq).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.mats.iter().flatten().all(Mat::is_finite)
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }
}
