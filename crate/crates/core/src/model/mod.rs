//! Graph families, configurations and single-step dynamics of the
//! constant-rate zero range process.

mod config;
mod graph;
mod index;
mod ranked;

pub use config::Configuration;
pub use graph::{GraphSpec, Vertex};
pub use index::{
    binomial, enumerate_configurations, rank, sample_uniform, space_size, unrank, ConfigIndex, ConfigSpace,
    DEFAULT_ENUMERATION_LIMIT,
};
pub use ranked::RankedState;

/// Outgoing transitions of `eta`: one entry per nonempty `v` and neighbour
/// `w` (with multiplicity), each at rate `1 / degree`.
///
/// Every vertex rings at rate 1, so the total outflow equals the number of
/// nonempty vertices.
pub fn transitions(graph: &GraphSpec, eta: &Configuration) -> Vec<(Configuration, f64)> {
    let rate = 1.0 / graph.degree() as f64;
    let mut out = Vec::new();
    for v in 0..graph.vertex_count() {
        if eta.get(v) == 0 {
            continue;
        }
        for w in graph.neighbors(v) {
            out.push((eta.moved(v, w), rate));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;

    fn aggregate(list: Vec<(Configuration, f64)>) -> BTreeMap<Configuration, f64> {
        let mut m = BTreeMap::new();
        for (c, q) in list {
            *m.entry(c).or_insert(0.0) += q;
        }
        m
    }

    #[test]
    fn transition_examples() {
        let k2 = GraphSpec::complete(2).unwrap();
        let t = aggregate(transitions(&k2, &Configuration::new(vec![1, 1])));
        assert_eq!(t.len(), 2);
        assert_eq!(t[&Configuration::new(vec![2, 0])], 1.0);
        assert_eq!(t[&Configuration::new(vec![0, 2])], 1.0);

        let c4 = GraphSpec::torus(1, 4).unwrap();
        let t = aggregate(transitions(&c4, &Configuration::new(vec![2, 0, 0, 0])));
        assert_eq!(t.len(), 2);
        assert_eq!(t[&Configuration::new(vec![1, 1, 0, 0])], 0.5);
        assert_eq!(t[&Configuration::new(vec![1, 0, 0, 1])], 0.5);

        let k3 = GraphSpec::complete(3).unwrap();
        let list = transitions(&k3, &Configuration::new(vec![2, 1, 0]));
        // two nonempty vertices, two destinations each
        assert_eq!(list.len(), 4);
        assert!(list.iter().all(|&(_, q)| q == 0.5));
        assert_eq!(list.iter().map(|&(_, q)| q).sum::<f64>(), 2.0);
    }

    #[test]
    fn rates_are_symmetric_and_conserve_particles() {
        let graphs = [
            GraphSpec::complete(4).unwrap(),
            GraphSpec::torus(1, 5).unwrap(),
            GraphSpec::torus(2, 2).unwrap(),
            GraphSpec::torus(2, 3).unwrap(),
        ];
        for g in graphs {
            for r in 0..=3 {
                for eta in enumerate_configurations(g.vertex_count(), r).unwrap() {
                    for (target, q) in aggregate(transitions(&g, &eta)) {
                        assert_eq!(target.particles(), r);
                        let back = aggregate(transitions(&g, &target));
                        assert_eq!(back.get(&eta).copied(), Some(q), "{eta} <-> {target}");
                    }
                }
            }
        }
    }
}
