use super::config::Configuration;
use super::graph::Vertex;

/// Particles carrying distinct ranks `0..r` (rank 0 is the highest).
///
/// `positions[i]` is the vertex of the rank-`i` particle. The per-vertex
/// rank lists are a cache kept sorted so the top particle and prefix
/// counts are cheap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedState {
    positions: Vec<Vertex>,
    stacks: Vec<Vec<usize>>,
}

impl RankedState {
    pub fn from_positions(n: usize, positions: Vec<Vertex>) -> Self {
        let mut stacks = vec![Vec::new(); n];
        for (rank, &v) in positions.iter().enumerate() {
            stacks[v].push(rank);
        }
        RankedState { positions, stacks }
    }

    /// Ranks assigned in vertex-index order.
    pub fn from_configuration(c: &Configuration) -> Self {
        let positions = c
            .occupancy()
            .iter()
            .enumerate()
            .flat_map(|(v, &k)| std::iter::repeat_n(v, k as usize))
            .collect();
        Self::from_positions(c.vertex_count(), positions)
    }

    pub fn vertex_count(&self) -> usize {
        self.stacks.len()
    }

    pub fn particles(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[Vertex] {
        &self.positions
    }

    pub fn position(&self, rank: usize) -> Vertex {
        self.positions[rank]
    }

    /// Ranks present at `v`, ascending.
    pub fn ranks_at(&self, v: Vertex) -> &[usize] {
        &self.stacks[v]
    }

    pub fn occupancy(&self, v: Vertex) -> usize {
        self.stacks[v].len()
    }

    /// Number of particles at `v` among ranks `0..j`.
    pub fn prefix_count(&self, v: Vertex, j: usize) -> usize {
        self.stacks[v].partition_point(|&rank| rank < j)
    }

    /// The highest-ranking particle at `v`.
    pub fn top(&self, v: Vertex) -> Option<usize> {
        self.stacks[v].first().copied()
    }

    /// Expels the top particle of `v` to `w`. Returns its rank, or `None`
    /// when `v` is empty.
    pub fn expel(&mut self, v: Vertex, w: Vertex) -> Option<usize> {
        if self.stacks[v].is_empty() {
            return None;
        }
        let rank = self.stacks[v].remove(0);
        self.place(rank, w);
        Some(rank)
    }

    fn place(&mut self, rank: usize, w: Vertex) {
        let at = self.stacks[w].partition_point(|&x| x < rank);
        self.stacks[w].insert(at, rank);
        self.positions[rank] = w;
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::new(self.stacks.iter().map(|s| s.len() as u32).collect())
    }

    /// Occupancies restricted to ranks `0..j`.
    pub fn prefix_configuration(&self, j: usize) -> Configuration {
        Configuration::new((0..self.vertex_count()).map(|v| self.prefix_count(v, j) as u32).collect())
    }

    /// Replaces the ranking; the new positions must describe the same configuration.
    pub fn rerank(&mut self, positions: Vec<Vertex>) {
        debug_assert_eq!(positions.len(), self.positions.len());
        *self = Self::from_positions(self.vertex_count(), positions);
    }
}
