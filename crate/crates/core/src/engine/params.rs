use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Explicit values; the length must equal the slice length.
    Values(Vec<f64>),
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Glorot { fan_in: usize, fan_out: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSlice {
    pub name: String,
    pub start: usize,
    pub len: usize,
    pub init: Init,
    /// Receives the L2 penalty during fitting.
    pub regularized: bool,
}

impl ParamSlice {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// Flat weight vector with named, disjoint, contiguous slices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterStore {
    values: Vec<f64>,
    slices: Vec<ParamSlice>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a slice; values are zero until [`initialize`](Self::initialize).
    pub fn add(&mut self, name: impl Into<String>, len: usize, init: Init, regularized: bool) -> Range<usize> {
        let name = name.into();
        assert!(self.slice(&name).is_none(), "duplicate slice `{name}`");
        if let Init::Values(v) = &init {
            assert_eq!(v.len(), len, "initial values for `{name}` have the wrong length");
        }
        let start = self.values.len();
        self.values.resize(start + len, 0.0);
        self.slices.push(ParamSlice {
            name,
            start,
            len,
            init,
            regularized,
        });
        start..start + len
    }

    /// Re-draws every slice from its initializer.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for s in &self.slices {
            let range = s.range();
            match &s.init {
                Init::Zeros => self.values[range].fill(0.0),
                Init::Constant(c) => self.values[range].fill(*c),
                Init::Values(v) => self.values[range].copy_from_slice(v),
                Init::Glorot { fan_in, fan_out } => {
                    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    for v in &mut self.values[range] {
                        *v = rng.random_range(-a..a);
                    }
                }
            }
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::Validation(format!(
                "expected {} parameters, got {}",
                self.values.len(),
                values.len()
            )));
        }
        self.values.copy_from_slice(values);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slices(&self) -> &[ParamSlice] {
        &self.slices
    }

    pub fn slice(&self, name: &str) -> Option<&ParamSlice> {
        self.slices.iter().find(|s| s.name == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.slice(name).map(|s| &self.values[s.range()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.slice(name)?.range();
        Some(&mut self.values[range])
    }

    /// `λ Σ w²` over regularized slices of `values`.
    pub fn l2_penalty(&self, values: &[f64], lambda: f64) -> f64 {
        self.slices
            .iter()
            .filter(|s| s.regularized)
            .map(|s| values[s.range()].iter().map(|w| w * w).sum::<f64>())
            .sum::<f64>()
            * lambda
    }

    /// Gradient of [`l2_penalty`](Self::l2_penalty); exactly zero outside
    /// regularized slices.
    pub fn l2_gradient(&self, values: &[f64], lambda: f64) -> Vec<f64> {
        let mut g = vec![0.0; values.len()];
        for s in self.slices.iter().filter(|s| s.regularized) {
            for i in s.range() {
                g[i] = 2.0 * lambda * values[i];
            }
        }
        g
    }
}
