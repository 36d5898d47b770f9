use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::Result;
use crate::model::{transitions, ConfigSpace, Configuration, GraphSpec, DEFAULT_ENUMERATION_LIMIT};

/// Sparse generator of the ZRP over its enumerated configuration space.
///
/// Off-diagonal rates are stored row-wise sorted by column; the diagonal is
/// the negative row sum.
#[derive(Debug, Clone)]
pub struct Generator {
    graph: GraphSpec,
    space: ConfigSpace,
    configs: Vec<Configuration>,
    rows: Vec<Vec<(usize, f64)>>,
    diag: Vec<f64>,
}

/// Builds the generator for `r` particles on `graph`.
pub fn build_generator(graph: &GraphSpec, r: usize) -> Result<Generator> {
    build_generator_with_limit(graph, r, DEFAULT_ENUMERATION_LIMIT)
}

pub fn build_generator_with_limit(graph: &GraphSpec, r: usize, limit: u128) -> Result<Generator> {
    graph.validate()?;
    let space = ConfigSpace::with_limit(graph.vertex_count(), r, limit)?;
    let configs = space.enumerate();
    // Rows are independent; collect() keeps them in index order.
    let rows: Vec<Vec<(usize, f64)>> = configs
        .par_iter()
        .map(|eta| {
            let mut row: BTreeMap<usize, f64> = BTreeMap::new();
            for (target, q) in transitions(graph, eta) {
                let j = space.rank(&target).expect("transition leaves the space").0 as usize;
                *row.entry(j).or_insert(0.0) += q;
            }
            row.into_iter().collect()
        })
        .collect();
    let diag = rows.iter().map(|row| -row.iter().map(|&(_, q)| q).sum::<f64>()).collect();
    Ok(Generator { graph: *graph, space, configs, rows, diag })
}

impl Generator {
    pub fn graph(&self) -> &GraphSpec {
        &self.graph
    }

    pub fn particles(&self) -> usize {
        self.space.particles()
    }

    pub fn dimension(&self) -> usize {
        self.configs.len()
    }

    pub fn configurations(&self) -> &[Configuration] {
        &self.configs
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn index_of(&self, c: &Configuration) -> Result<usize> {
        Ok(self.space.rank(c)?.0 as usize)
    }

    /// Off-diagonal entries of row `x`.
    pub fn row(&self, x: usize) -> &[(usize, f64)] {
        &self.rows[x]
    }

    pub fn diagonal(&self, x: usize) -> f64 {
        self.diag[x]
    }

    /// Largest exit rate, the uniformization constant.
    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0, |m, &d| m.max(-d))
    }

    /// `y = (-Q) x`.
    pub fn apply_negated(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = -self.diag[i] * x[i];
            for &(j, q) in &self.rows[i] {
                acc -= q * x[j];
            }
            *yi = acc;
        }
    }

    /// Dense copy of the generator, row-major.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dimension();
        let mut m = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for &(j, q) in &self.rows[i] {
                m[(i, j)] = q;
            }
        }
        m
    }

    /// Largest `|q(x,y) - q(y,x)|`; zero for the constant-rate ZRP.
    pub fn asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, q) in row {
                let back = self.rows[j].binary_search_by_key(&i, |&(k, _)| k).map(|p| self.rows[j][p].1).unwrap_or(0.0);
                worst = worst.max((q - back).abs());
            }
        }
        worst
    }

    /// Out-rate lists in the form used by [`super::uniformization`].
    pub fn rate_rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_two_sites_two_particles() {
        let g = build_generator(&GraphSpec::complete(2).unwrap(), 2).unwrap();
        let dense = g.to_dense();
        let expected = nalgebra::DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 1.0, -2.0, 1.0, 0.0, 1.0, -1.0]);
        assert_eq!(dense, expected);
    }

    #[test]
    fn empty_system_is_one_by_one_zero() {
        for graph in [GraphSpec::complete(4).unwrap(), GraphSpec::torus(2, 3).unwrap()] {
            let g = build_generator(&graph, 0).unwrap();
            assert_eq!(g.dimension(), 1);
            assert_eq!(g.to_dense()[(0, 0)], 0.0);
        }
    }

    #[test]
    fn three_cycle_equals_triangle() {
        let a = build_generator(&GraphSpec::torus(1, 3).unwrap(), 1).unwrap();
        let b = build_generator(&GraphSpec::complete(3).unwrap(), 1).unwrap();
        assert_eq!(a.to_dense(), b.to_dense());
    }

    #[test]
    fn symmetric_with_zero_row_sums_and_uniform_stationary() {
        for (graph, r) in [
            (GraphSpec::torus(1, 5).unwrap(), 3),
            (GraphSpec::torus(2, 2).unwrap(), 3),
            (GraphSpec::complete(4).unwrap(), 4),
        ] {
            let g = build_generator(&graph, r).unwrap();
            assert_eq!(g.asymmetry(), 0.0);
            let dense = g.to_dense();
            for i in 0..g.dimension() {
                assert!(dense.row(i).sum().abs() < 1e-12);
            }
            // Adjoint applied to the uniform vector.
            let u = nalgebra::DVector::from_element(g.dimension(), 1.0 / g.dimension() as f64);
            let flux = dense.transpose() * u;
            assert!(flux.amax() < 1e-12);
        }
    }

    #[test]
    fn capacity_error_is_reported() {
        let err = build_generator_with_limit(&GraphSpec::torus(1, 10).unwrap(), 10, 1000).unwrap_err();
        assert!(matches!(err, crate::ZrpError::Capacity { size: 92378, limit: 1000 }));
    }
}
