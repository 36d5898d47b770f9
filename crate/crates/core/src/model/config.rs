use std::fmt;

use serde::{Deserialize, Serialize};

use super::graph::Vertex;
use crate::error::{Result, ZrpError};

/// Occupancy numbers of every vertex. Serialized as a plain JSON array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(Vec<u32>);

impl Configuration {
    pub fn new(occupancy: Vec<u32>) -> Self {
        Configuration(occupancy)
    }

    pub fn empty(n: usize) -> Self {
        Configuration(vec![0; n])
    }

    /// The configuration with a single particle at `w`.
    pub fn single(n: usize, w: Vertex) -> Self {
        Self::stacked(n, w, 1)
    }

    /// All `count` particles on vertex `w`.
    pub fn stacked(n: usize, w: Vertex, count: u32) -> Self {
        let mut occ = vec![0; n];
        occ[w] = count;
        Configuration(occ)
    }

    pub fn occupancy(&self) -> &[u32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<u32> {
        self.0
    }

    pub fn vertex_count(&self) -> usize {
        self.0.len()
    }

    /// Total number of particles `r`.
    pub fn particles(&self) -> usize {
        self.0.iter().map(|&c| c as usize).sum()
    }

    pub fn density(&self) -> f64 {
        self.particles() as f64 / self.vertex_count() as f64
    }

    pub fn get(&self, v: Vertex) -> u32 {
        self.0[v]
    }

    pub fn nonempty_count(&self) -> usize {
        self.0.iter().filter(|&&c| c > 0).count()
    }

    /// Vertex-wise minimum.
    pub fn meet(&self, other: &Configuration) -> Configuration {
        Configuration(self.0.iter().zip(&other.0).map(|(&a, &b)| a.min(b)).collect())
    }

    /// Adds one particle at `w`.
    pub fn plus(&self, w: Vertex) -> Configuration {
        let mut occ = self.0.clone();
        occ[w] += 1;
        Configuration(occ)
    }

    /// Moves one particle from `v` to `w`; `v` must be nonempty.
    pub fn moved(&self, v: Vertex, w: Vertex) -> Configuration {
        debug_assert!(self.0[v] > 0);
        let mut occ = self.0.clone();
        occ[v] -= 1;
        occ[w] += 1;
        Configuration(occ)
    }

    /// Checks that this is a configuration of `r` particles on `n` vertices.
    pub fn check(&self, n: usize, r: usize) -> Result<()> {
        if self.0.len() != n {
            return Err(ZrpError::InvalidArgument(format!(
                "configuration has {} entries, graph has {n} vertices",
                self.0.len()
            )));
        }
        if self.particles() != r {
            return Err(ZrpError::InvalidArgument(format!(
                "configuration holds {} particles, expected {r}",
                self.particles()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

impl From<Vec<u32>> for Configuration {
    fn from(v: Vec<u32>) -> Self {
        Configuration(v)
    }
}
