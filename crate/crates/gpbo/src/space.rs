//! Discrete configuration spaces of integer-indexed hyperparameters.
//!
//! Every hyperparameter is an index over `cardinality` ordered choices.
//! Geometry (distances, the surrogate kernel, acquisition refinement) is
//! done in the unit cube: index `i` of a dimension with `n` values maps to
//! `i / (n - 1)`, and degenerate one-value dimensions pin to `0.5`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One integer-indexed hyperparameter: `cardinality` valid values `0..cardinality`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperparameterDef {
    pub name: String,
    pub cardinality: usize,
}

impl HyperparameterDef {
    pub fn new(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            cardinality,
        }
    }
}

/// An ordered list of hyperparameter definitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Space {
    dims: Vec<HyperparameterDef>,
}

/// A point in a [`Space`]: one index per dimension.
///
/// Equality and hashing are by index vector, so configurations can be used
/// directly as deduplication keys.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    indices: Vec<usize>,
}

impl Configuration {
    pub fn new(indices: Vec<usize>) -> Self {
        Self { indices }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceDoc {
    dims: Vec<HyperparameterDef>,
}

impl Space {
    /// Builds a space, checking that every dimension has at least one value
    /// and that names are unique and non-empty.
    pub fn new(dims: Vec<HyperparameterDef>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidInput("space has no dimensions".into()));
        }
        for (i, dim) in dims.iter().enumerate() {
            if dim.cardinality == 0 {
                return Err(Error::InvalidInput(format!(
                    "dimension {i} ({:?}) has cardinality 0",
                    dim.name
                )));
            }
            if dim.name.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "dimension {i} has an empty name"
                )));
            }
        }
        for (i, dim) in dims.iter().enumerate() {
            if dims[..i].iter().any(|d| d.name == dim.name) {
                return Err(Error::InvalidInput(format!(
                    "duplicate hyperparameter name {:?}",
                    dim.name
                )));
            }
        }
        Ok(Self { dims })
    }

    /// Convenience constructor from per-dimension cardinalities, named `x0..`.
    pub fn from_cardinalities(cards: &[usize]) -> Result<Self> {
        Self::new(
            cards
                .iter()
                .enumerate()
                .map(|(i, &n)| HyperparameterDef::new(format!("x{i}"), n))
                .collect(),
        )
    }

    /// Parses the space definition document `{"dims": [{"name", "cardinality"}, ...]}`.
    /// File order is dimension order.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpaceDoc = serde_json::from_str(text)
            .map_err(|e| Error::InvalidInput(format!("space definition: {e}")))?;
        Self::new(doc.dims)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SpaceDoc {
            dims: self.dims.clone(),
        })
        .expect("space serialization cannot fail")
    }

    pub fn dims(&self) -> &[HyperparameterDef] {
        &self.dims
    }

    /// Number of dimensions.
    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    /// Total number of configurations, saturating at `u128::MAX`.
    pub fn grid_size(&self) -> u128 {
        self.dims
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.cardinality as u128))
    }

    /// Checks that `c` has the right length and in-range indices.
    pub fn validate(&self, c: &Configuration) -> Result<()> {
        if c.indices.len() != self.dim() {
            return Err(Error::InvalidConfiguration(format!(
                "expected {} indices, got {}",
                self.dim(),
                c.indices.len()
            )));
        }
        for (i, (&idx, dim)) in c.indices.iter().zip(&self.dims).enumerate() {
            if idx >= dim.cardinality {
                return Err(Error::InvalidConfiguration(format!(
                    "index {idx} out of range for dimension {i} (cardinality {})",
                    dim.cardinality
                )));
            }
        }
        Ok(())
    }

    /// Maps a configuration into the unit cube: `i / (n - 1)`, with
    /// one-value dimensions pinned to `0.5`.
    pub fn to_unit(&self, c: &Configuration) -> Result<Vec<f64>> {
        self.validate(c)?;
        Ok(c.indices
            .iter()
            .zip(&self.dims)
            .map(|(&idx, dim)| {
                if dim.cardinality > 1 {
                    idx as f64 / (dim.cardinality - 1) as f64
                } else {
                    0.5
                }
            })
            .collect())
    }

    /// Rounds a unit-cube point back onto the grid: clip to `[0, 1]`, scale
    /// by `n - 1`, round half away from zero.
    pub fn from_unit(&self, u: &[f64]) -> Result<Configuration> {
        if u.len() != self.dim() {
            return Err(Error::InvalidInput(format!(
                "expected {} coordinates, got {}",
                self.dim(),
                u.len()
            )));
        }
        let mut indices = Vec::with_capacity(u.len());
        for (i, (&x, dim)) in u.iter().zip(&self.dims).enumerate() {
            if !x.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "non-finite coordinate {x} in dimension {i}"
                )));
            }
            let scaled = x.clamp(0.0, 1.0) * (dim.cardinality - 1) as f64;
            indices.push(scaled.round() as usize);
        }
        Ok(Configuration::new(indices))
    }

    /// Draws `k` configurations, each index uniform over its range.
    /// Duplicates are permitted.
    pub fn sample_random<R: Rng>(&self, rng: &mut R, k: usize) -> Vec<Configuration> {
        (0..k)
            .map(|_| {
                Configuration::new(
                    self.dims
                        .iter()
                        .map(|d| rng.random_range(0..d.cardinality))
                        .collect(),
                )
            })
            .collect()
    }

    /// For each dimension with more than one value, emits `per_dim`
    /// configurations identical to `c` except for that dimension, which is
    /// replaced by a uniformly drawn different value.
    pub fn one_exchange_neighbors<R: Rng>(
        &self,
        c: &Configuration,
        rng: &mut R,
        per_dim: usize,
    ) -> Result<Vec<Configuration>> {
        self.validate(c)?;
        let mut out = Vec::new();
        for (i, dim) in self.dims.iter().enumerate() {
            if dim.cardinality < 2 {
                continue;
            }
            for _ in 0..per_dim {
                let draw = rng.random_range(0..dim.cardinality - 1);
                let value = if draw >= c.indices[i] { draw + 1 } else { draw };
                let mut indices = c.indices.clone();
                indices[i] = value;
                out.push(Configuration::new(indices));
            }
        }
        Ok(out)
    }

    /// Iterates every configuration in lexicographic index order.
    /// Intended for exhaustive scans of desk-scale grids.
    pub fn iter_configurations(&self) -> ConfigurationIter<'_> {
        ConfigurationIter {
            space: self,
            next: Some(vec![0; self.dim()]),
        }
    }

    /// Lexicographic rank -> configuration, for indexed parallel scans.
    pub fn configuration_at(&self, mut rank: u128) -> Option<Configuration> {
        if rank >= self.grid_size() {
            return None;
        }
        let mut indices = vec![0usize; self.dim()];
        for (slot, dim) in indices.iter_mut().zip(&self.dims).rev() {
            let n = dim.cardinality as u128;
            *slot = (rank % n) as usize;
            rank /= n;
        }
        Some(Configuration::new(indices))
    }
}

/// See [`Space::iter_configurations`].
pub struct ConfigurationIter<'a> {
    space: &'a Space,
    next: Option<Vec<usize>>,
}

impl Iterator for ConfigurationIter<'_> {
    type Item = Configuration;

    fn next(&mut self) -> Option<Configuration> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut carried = true;
        for (slot, dim) in succ.iter_mut().zip(self.space.dims()).rev() {
            *slot += 1;
            if *slot < dim.cardinality {
                carried = false;
                break;
            }
            *slot = 0;
        }
        if !carried {
            self.next = Some(succ);
        }
        Some(Configuration::new(current))
    }
}

/// Squared Euclidean distance between two unit-cube points.
pub(crate) fn unit_dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
