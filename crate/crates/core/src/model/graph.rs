use std::collections::VecDeque;

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZrpError};

/// Vertex index. Torus vertices are encoded in base `L`, first coordinate
/// least significant.
pub type Vertex = usize;

/// The two graph families the process runs on.
///
/// Serialized as `{"family":"torus","d":1,"L":4}` or `{"family":"complete","n":5}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum GraphSpec {
    /// The discrete torus Z^d / L Z^d.
    Torus {
        d: usize,
        #[serde(rename = "L")]
        l: usize,
    },
    /// The complete graph on `n` vertices, no self-loops.
    Complete { n: usize },
}

impl GraphSpec {
    pub fn torus(d: usize, l: usize) -> Result<Self> {
        let g = GraphSpec::Torus { d, l };
        g.validate()?;
        Ok(g)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let g = GraphSpec::Complete { n };
        g.validate()?;
        Ok(g)
    }

    /// Checks the family constraints (deserialized values are not checked).
    pub fn validate(&self) -> Result<()> {
        match *self {
            GraphSpec::Torus { d, l } => {
                if d == 0 {
                    return Err(ZrpError::InvalidArgument("torus dimension must be positive".into()));
                }
                if l < 2 {
                    return Err(ZrpError::InvalidArgument("torus side length must be at least 2".into()));
                }
                if (l as u128).checked_pow(d as u32).is_none_or(|n| n > u32::MAX as u128) {
                    return Err(ZrpError::InvalidArgument("torus has too many vertices".into()));
                }
            }
            GraphSpec::Complete { n } => {
                if n < 2 {
                    return Err(ZrpError::InvalidArgument("complete graph needs at least 2 vertices".into()));
                }
            }
        }
        Ok(())
    }

    pub fn vertex_count(&self) -> usize {
        match *self {
            GraphSpec::Torus { d, l } => l.pow(d as u32),
            GraphSpec::Complete { n } => n,
        }
    }

    /// Degree of every vertex. A torus with `L = 2` counts the coincident
    /// `+1`/`-1` neighbours separately, so its degree is still `2d`.
    pub fn degree(&self) -> usize {
        match *self {
            GraphSpec::Torus { d, .. } => 2 * d,
            GraphSpec::Complete { n } => n - 1,
        }
    }

    /// `L = 2` tori and the two-vertex complete graph use conventions of our own.
    pub fn is_degenerate(&self) -> bool {
        matches!(*self, GraphSpec::Torus { l: 2, .. } | GraphSpec::Complete { n: 2 })
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        match *self {
            GraphSpec::Torus { d, l } if l == 2 => format!("torus(d={d},L={l}) degenerate-torus"),
            GraphSpec::Torus { d, l } => format!("torus(d={d},L={l})"),
            GraphSpec::Complete { n } => format!("complete(n={n})"),
        }
    }

    pub fn side(&self) -> Option<usize> {
        match *self {
            GraphSpec::Torus { l, .. } => Some(l),
            GraphSpec::Complete { .. } => None,
        }
    }

    /// Coordinates of a torus vertex (first coordinate first).
    pub fn coords(&self, v: Vertex) -> Vec<usize> {
        match *self {
            GraphSpec::Torus { d, l } => {
                let mut rest = v;
                (0..d)
                    .map(|_| {
                        let c = rest % l;
                        rest /= l;
                        c
                    })
                    .collect()
            }
            GraphSpec::Complete { .. } => vec![v],
        }
    }

    pub fn vertex_at(&self, coords: &[usize]) -> Vertex {
        match *self {
            GraphSpec::Torus { l, .. } => coords.iter().rev().fold(0, |acc, &c| acc * l + c % l),
            GraphSpec::Complete { .. } => coords[0],
        }
    }

    /// Neighbours of `v` listed with multiplicity; the list has length
    /// [`GraphSpec::degree`]. Torus direction `k` moves along axis `k / 2`,
    /// forward for even `k`.
    pub fn neighbors(&self, v: Vertex) -> Vec<Vertex> {
        match *self {
            GraphSpec::Torus { d, l } => (0..2 * d).map(|k| self.torus_step(v, k, d, l)).collect(),
            GraphSpec::Complete { n } => (0..n).filter(|&w| w != v).collect(),
        }
    }

    fn torus_step(&self, v: Vertex, k: usize, d: usize, l: usize) -> Vertex {
        debug_assert!(k < 2 * d);
        let axis = k / 2;
        let stride = l.pow(axis as u32);
        let c = (v / stride) % l;
        let c2 = if k.is_multiple_of(2) { (c + 1) % l } else { (c + l - 1) % l };
        v - c * stride + c2 * stride
    }

    /// Index of the direction opposite to `k` (used to pair directed edges).
    pub fn reverse_direction(&self, k: usize) -> usize {
        match *self {
            GraphSpec::Torus { .. } => k ^ 1,
            GraphSpec::Complete { .. } => unreachable!("complete graph edges are indexed by endpoint"),
        }
    }

    /// Breadth-first distances and exact shortest-path counts from `src`.
    pub fn bfs_counts(&self, src: Vertex) -> (Vec<usize>, Vec<BigUint>) {
        let n = self.vertex_count();
        let mut dist = vec![usize::MAX; n];
        let mut count = vec![BigUint::zero(); n];
        dist[src] = 0;
        count[src] = BigUint::one();
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for w in self.neighbors(u) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[u] + 1 {
                    let add = count[u].clone();
                    count[w] += add;
                }
            }
        }
        (dist, count)
    }

    /// Graph distance and number of shortest `u -> v` paths.
    ///
    /// On the `L = 2` torus the parallel edges are distinct, so paths through
    /// them are counted with multiplicity.
    pub fn shortest_path_data(&self, u: Vertex, v: Vertex) -> Result<(usize, BigUint)> {
        let n = self.vertex_count();
        if u >= n || v >= n {
            return Err(ZrpError::OutOfRange { index: u.max(v) as u128, size: n as u128 });
        }
        let (dist, count) = self.bfs_counts(u);
        Ok((dist[v], count[v].clone()))
    }

    pub fn diameter(&self) -> usize {
        match *self {
            GraphSpec::Torus { d, l } => d * (l / 2),
            GraphSpec::Complete { .. } => 1,
        }
    }
}
