//! Uniform shortest-path multicommodity flow on the torus and the comparison
//! certificate between the torus and the complete graph.
//!
//! Each ordered pair `(u, v)` ships one unit from `u` to `v`, split evenly
//! over all shortest paths. A directed edge `a -> b` lying on a shortest
//! `u -> v` path carries `N(u,a) N(b,v) / N(u,v)` of that unit, where `N`
//! counts shortest paths. All arithmetic is exact.

use std::collections::BTreeMap;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use crate::error::{Result, ZrpError};
use crate::model::{ConfigSpace, Configuration, GraphSpec, Vertex, DEFAULT_ENUMERATION_LIMIT};
use crate::spectral::{build_generator, exact_gap};

/// Largest torus (vertex count) accepted by [`edge_loads`].
pub const FLOW_VERTEX_LIMIT: usize = 4096;

/// Serializes a rational as `{"num":…,"den":…,"decimal":…}`.
fn ser_rational<S: Serializer>(q: &BigRational, s: S) -> std::result::Result<S::Ok, S::Error> {
    let mut st = s.serialize_struct("Rational", 3)?;
    match (q.numer().to_i64(), q.denom().to_i64()) {
        (Some(n), Some(d)) => {
            st.serialize_field("num", &n)?;
            st.serialize_field("den", &d)?;
        }
        _ => {
            st.serialize_field("num", &q.numer().to_string())?;
            st.serialize_field("den", &q.denom().to_string())?;
        }
    }
    st.serialize_field("decimal", &q.to_f64().unwrap_or(f64::NAN))?;
    st.end()
}

fn ser_rational_vec<S: Serializer>(v: &[BigRational], s: S) -> std::result::Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct W<'a>(#[serde(serialize_with = "ser_rational")] &'a BigRational);
    s.collect_seq(v.iter().map(W))
}

fn ratio(num: &BigUint, den: &BigUint) -> BigRational {
    BigRational::new(BigInt::from(num.clone()), BigInt::from(den.clone()))
}

fn int(n: usize) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

/// A directed torus edge: leave `from` in direction `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DirectedEdge {
    pub from: Vertex,
    pub direction: usize,
    pub to: Vertex,
}

fn torus_dims(graph: &GraphSpec) -> Result<(usize, usize)> {
    match *graph {
        GraphSpec::Torus { d, l } => {
            graph.validate()?;
            if graph.vertex_count() > FLOW_VERTEX_LIMIT {
                return Err(ZrpError::Capacity { size: graph.vertex_count() as u128, limit: FLOW_VERTEX_LIMIT as u128 });
            }
            Ok((d, l))
        }
        GraphSpec::Complete { .. } => Err(ZrpError::InvalidArgument("the comparison flow is defined on tori".into())),
    }
}

/// Shortest-path distances and counts between all vertex pairs.
struct PathTable {
    dist: Vec<Vec<usize>>,
    count: Vec<Vec<BigUint>>,
}

impl PathTable {
    fn new(graph: &GraphSpec) -> Self {
        let (dist, count) = (0..graph.vertex_count()).into_par_iter().map(|u| graph.bfs_counts(u)).unzip();
        PathTable { dist, count }
    }

    /// Shares of the `u -> v` unit carried by every directed edge, in
    /// edge-index order (`from * degree + direction`); zero shares omitted.
    fn pair_shares(&self, graph: &GraphSpec, u: Vertex, v: Vertex) -> Vec<(usize, BigRational)> {
        let deg = graph.degree();
        let total = self.dist[u][v];
        let mut out = Vec::new();
        for a in 0..graph.vertex_count() {
            let da = self.dist[u][a];
            if da >= total {
                continue;
            }
            for (k, b) in graph.neighbors(a).into_iter().enumerate() {
                if da + 1 + self.dist[b][v] == total {
                    let paths = &self.count[u][a] * &self.count[b][v];
                    out.push((a * deg + k, ratio(&paths, &self.count[u][v])));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeLoadReport {
    pub graph: GraphSpec,
    pub edges: Vec<DirectedEdge>,
    /// Load on each directed edge, indexed like `edges`.
    #[serde(serialize_with = "ser_rational_vec")]
    pub directed: Vec<BigRational>,
    /// Load of each undirected edge (both directions), one entry per edge
    /// leaving a vertex in an even (forward) direction.
    #[serde(serialize_with = "ser_rational_vec")]
    pub undirected: Vec<BigRational>,
    #[serde(serialize_with = "ser_rational")]
    pub max_directed: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub max_undirected: BigRational,
    /// `L (L^d - 1)`.
    #[serde(serialize_with = "ser_rational")]
    pub load_bound: BigRational,
    pub all_equal: bool,
}

impl EdgeLoadReport {
    pub fn within_bound(&self) -> bool {
        self.max_undirected <= self.load_bound
    }

    /// Directed load of the edge leaving `from` in `direction`.
    pub fn directed_load(&self, from: Vertex, direction: usize) -> &BigRational {
        &self.directed[from * self.graph.degree() + direction]
    }

    /// Load of the undirected edge containing the given directed edge.
    pub fn undirected_load(&self, from: Vertex, direction: usize) -> BigRational {
        let to = self.graph.neighbors(from)[direction];
        self.directed_load(from, direction) + self.directed_load(to, self.graph.reverse_direction(direction))
    }
}

pub fn edge_loads(graph: &GraphSpec) -> Result<EdgeLoadReport> {
    let (_, l) = torus_dims(graph)?;
    let n = graph.vertex_count();
    let deg = graph.degree();
    let table = PathTable::new(graph);
    let directed: Vec<BigRational> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut acc = vec![BigRational::zero(); n * deg];
            for v in (0..n).filter(|&v| v != u) {
                for (e, share) in table.pair_shares(graph, u, v) {
                    acc[e] += share;
                }
            }
            acc
        })
        .reduce(
            || vec![BigRational::zero(); n * deg],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let mut edges = Vec::with_capacity(n * deg);
    for a in 0..n {
        for (k, b) in graph.neighbors(a).into_iter().enumerate() {
            edges.push(DirectedEdge { from: a, direction: k, to: b });
        }
    }
    let mut undirected = Vec::with_capacity(n * deg / 2);
    for e in &edges {
        if e.direction % 2 == 0 {
            undirected.push(&directed[e.from * deg + e.direction] + &directed[e.to * deg + (e.direction ^ 1)]);
        }
    }
    let max_directed = directed.iter().max().cloned().unwrap_or_else(BigRational::zero);
    let max_undirected = undirected.iter().max().cloned().unwrap_or_else(BigRational::zero);
    let all_equal = undirected.iter().all(|x| *x == max_undirected) && directed.iter().all(|x| *x == max_directed);
    let load_bound = int(l) * int(n - 1);
    Ok(EdgeLoadReport { graph: *graph, edges, directed, undirected, max_directed, max_undirected, load_bound, all_equal })
}

/// Verifies that each ordered pair ships exactly one unit and conserves
/// flow at intermediate vertices. Returns the number of pairs checked.
pub fn check_pair_conservation(graph: &GraphSpec) -> Result<usize> {
    torus_dims(graph)?;
    let n = graph.vertex_count();
    let deg = graph.degree();
    let table = PathTable::new(graph);
    let mut pairs = 0;
    for u in 0..n {
        for v in (0..n).filter(|&v| v != u) {
            let mut net = vec![BigRational::zero(); n];
            for (e, share) in table.pair_shares(graph, u, v) {
                let (a, k) = (e / deg, e % deg);
                let b = graph.neighbors(a)[k];
                net[a] += &share;
                net[b] -= share;
            }
            for (w, x) in net.iter().enumerate() {
                let expected = if w == u {
                    BigRational::one()
                } else if w == v {
                    -BigRational::one()
                } else {
                    BigRational::zero()
                };
                if *x != expected {
                    return Err(ZrpError::InvariantViolation(format!("pair ({u},{v}) has net flow {x} at {w}")));
                }
            }
            pairs += 1;
        }
    }
    Ok(pairs)
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonCertificate {
    pub d: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(serialize_with = "ser_rational")]
    pub congestion: BigRational,
    /// Longest flow-carrying path: the diameter, since only shortest paths carry flow.
    pub length: usize,
    /// The certified length bound `d L`.
    pub length_bound: usize,
    #[serde(serialize_with = "ser_rational")]
    pub bound_factor: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub headline_factor: BigRational,
    pub tau2: Option<f64>,
    pub tau1_bound: Option<f64>,
}

pub const CERTIFICATE_CSV_HEADER: &str =
    "d,L,congestion,length,bound_factor,headline_factor,congestion_decimal,bound_factor_decimal,headline_factor_decimal";

impl ComparisonCertificate {
    /// Row matching [`CERTIFICATE_CSV_HEADER`]: rationals as `p/q`, then their decimals.
    pub fn csv_row(&self) -> String {
        let dec = |q: &BigRational| q.to_f64().unwrap_or(f64::NAN);
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.d,
            self.l,
            self.congestion,
            self.length,
            self.bound_factor,
            self.headline_factor,
            dec(&self.congestion),
            dec(&self.bound_factor),
            dec(&self.headline_factor)
        )
    }
}

pub fn comparison_certificate(graph: &GraphSpec, tau2: Option<f64>) -> Result<ComparisonCertificate> {
    let loads = edge_loads(graph)?;
    let (d, l) = torus_dims(graph)?;
    let congestion = &loads.max_undirected / int(graph.vertex_count() - 1);
    let length = graph.diameter();
    let bound_factor = int(2 * d) * &congestion * int(length);
    let headline_factor = int(2 * d * d * l * l);
    let tau1_bound = tau2.map(|t| bound_factor.to_f64().unwrap_or(f64::INFINITY) * t);
    Ok(ComparisonCertificate { d, l, congestion, length, length_bound: d * l, bound_factor, headline_factor, tau2, tau1_bound })
}

/// Exact relaxation times on the torus and on the complete graph with the
/// same vertex and particle counts, checked against the certificate.
#[derive(Debug, Clone, Serialize)]
pub struct EndToEnd {
    pub certificate: ComparisonCertificate,
    pub r: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub bound_holds: bool,
    pub headline_holds: bool,
}

pub fn end_to_end(graph: &GraphSpec, r: usize) -> Result<EndToEnd> {
    let tau1 = exact_gap(&build_generator(graph, r)?)?.relaxation_time;
    let complete = GraphSpec::complete(graph.vertex_count())?;
    let tau2 = exact_gap(&build_generator(&complete, r)?)?.relaxation_time;
    let certificate = comparison_certificate(graph, Some(tau2))?;
    let bound = certificate.tau1_bound.unwrap();
    let headline = certificate.headline_factor.to_f64().unwrap() * tau2;
    Ok(EndToEnd { r, tau1, tau2, bound_holds: tau1 <= bound, headline_holds: bound <= headline, certificate })
}

#[derive(Debug, Clone, Serialize)]
pub struct InducedFlowCheck {
    pub graph: GraphSpec,
    pub r: usize,
    /// Number of ordered pairs of the complete-graph configuration graph routed.
    pub routed_pairs: usize,
    /// Number of directed configuration-graph edges.
    pub config_edges: usize,
    #[serde(serialize_with = "ser_rational")]
    pub max_config_flow: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub max_vertex_load: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub congestion_direct: BigRational,
    #[serde(serialize_with = "ser_rational")]
    pub congestion_predicted: BigRational,
    /// Configuration edges whose routed flow differs from the vertex-level load.
    pub mismatches: usize,
    pub agrees: bool,
}

/// Routes every complete-graph transition `η -> η'` through configurations
/// `η ∧ η' + χ_w` following the vertex flow, and compares the resulting
/// configuration-edge flows with the vertex-level edge loads.
pub fn induced_flow_check(graph: &GraphSpec, r: usize) -> Result<InducedFlowCheck> {
    induced_flow_check_with_limit(graph, r, DEFAULT_ENUMERATION_LIMIT)
}

pub fn induced_flow_check_with_limit(graph: &GraphSpec, r: usize, limit: u128) -> Result<InducedFlowCheck> {
    torus_dims(graph)?;
    if r == 0 {
        return Err(ZrpError::InvalidArgument("need at least one particle".into()));
    }
    let n = graph.vertex_count();
    let deg = graph.degree();
    let space = ConfigSpace::with_limit(n, r, limit)?;
    let configs = space.enumerate();
    let table = PathTable::new(graph);
    let loads = edge_loads(graph)?;
    let shares: Vec<Vec<Vec<(usize, BigRational)>>> =
        (0..n).map(|u| (0..n).map(|v| if u == v { Vec::new() } else { table.pair_shares(graph, u, v) }).collect()).collect();

    // Key: (index of ζ + χ_a, directed vertex edge index). The vertex edge
    // fixes a, so together these identify one configuration-graph edge.
    let mut flow: BTreeMap<(u64, usize), BigRational> = BTreeMap::new();
    let mut routed = 0;
    for eta in &configs {
        for u in (0..n).filter(|&u| eta.get(u) > 0) {
            let mut zeta = eta.occupancy().to_vec();
            zeta[u] -= 1;
            for v in (0..n).filter(|&v| v != u) {
                routed += 1;
                for (e, share) in &shares[u][v] {
                    let a = e / deg;
                    zeta[a] += 1;
                    let idx = space.rank(&Configuration::new(zeta.clone()))?.0;
                    zeta[a] -= 1;
                    *flow.entry((idx, *e)).or_insert_with(BigRational::zero) += share;
                }
            }
        }
    }

    // Every configuration edge, routed or not, is compared.
    let mut config_edges = 0;
    let mut mismatches = 0;
    let mut max_config_flow = BigRational::zero();
    let mut max_undirected = BigRational::zero();
    let zero = BigRational::zero();
    for (idx, zeta1) in configs.iter().enumerate() {
        for a in (0..n).filter(|&a| zeta1.get(a) > 0) {
            for (k, b) in graph.neighbors(a).into_iter().enumerate() {
                config_edges += 1;
                let e = a * deg + k;
                let f = flow.get(&(idx as u64, e)).unwrap_or(&zero);
                if f != &loads.directed[e] {
                    mismatches += 1;
                }
                if *f > max_config_flow {
                    max_config_flow = f.clone();
                }
                if k % 2 == 0 {
                    let zeta2 = zeta1.moved(a, b);
                    let back_idx = space.rank(&zeta2)?.0;
                    let back = flow.get(&(back_idx, b * deg + (k ^ 1))).unwrap_or(&zero);
                    let both = f + back;
                    if both > max_undirected {
                        max_undirected = both;
                    }
                }
            }
        }
    }
    let norm = int(n - 1);
    let congestion_direct = &max_undirected / &norm;
    let congestion_predicted = &loads.max_undirected / &norm;
    let agrees = mismatches == 0 && congestion_direct == congestion_predicted && max_config_flow == loads.max_directed;
    Ok(InducedFlowCheck {
        graph: *graph,
        r,
        routed_pairs: routed,
        config_edges,
        max_config_flow,
        max_vertex_load: loads.max_directed,
        congestion_direct,
        congestion_predicted,
        mismatches,
        agrees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    /// Oracle: total undirected load is the sum of all pairwise distances
    /// spread over the d L^d edges, since every pair ships one unit along
    /// paths of length dist(u, v).
    fn distance_sum(graph: &GraphSpec) -> usize {
        (0..graph.vertex_count()).map(|u| graph.bfs_counts(u).0.iter().sum::<usize>()).sum()
    }

    #[test]
    fn spot_loads() {
        for (graph, g) in [(GraphSpec::torus(1, 3).unwrap(), 2), (GraphSpec::torus(1, 4).unwrap(), 4), (GraphSpec::torus(2, 3).unwrap(), 6)]
        {
            let rep = edge_loads(&graph).unwrap();
            assert!(rep.all_equal);
            assert_eq!(rep.max_undirected, int(g));
            assert!(rep.within_bound());
            let edges = graph.vertex_count() * graph.degree() / 2;
            assert_eq!(rep.undirected.len(), edges);
            assert_eq!(int(distance_sum(&graph)), int(g) * int(edges));
        }
    }

    #[test]
    fn load_bound_over_grid() {
        for d in 1..=2 {
            for l in 3..=6 {
                let graph = GraphSpec::torus(d, l).unwrap();
                let rep = edge_loads(&graph).unwrap();
                assert!(rep.all_equal, "d={d} L={l}");
                assert!(rep.within_bound(), "d={d} L={l}");
                let edges = d * graph.vertex_count();
                assert_eq!(rep.max_undirected.clone() * int(edges), int(distance_sum(&graph)));
            }
        }
    }

    #[test]
    fn conservation() {
        for graph in [GraphSpec::torus(1, 4).unwrap(), GraphSpec::torus(2, 3).unwrap(), GraphSpec::torus(2, 4).unwrap()] {
            let n = graph.vertex_count();
            assert_eq!(check_pair_conservation(&graph).unwrap(), n * (n - 1));
        }
    }

    #[test]
    fn certificate_values() {
        let c = comparison_certificate(&GraphSpec::torus(1, 3).unwrap(), None).unwrap();
        assert_eq!((c.congestion.clone(), c.length, c.bound_factor.clone()), (int(1), 1, int(2)));
        assert!(c.tau1_bound.is_none());
        let c = comparison_certificate(&GraphSpec::torus(1, 4).unwrap(), Some(0.75)).unwrap();
        assert_eq!(c.congestion, q(4, 3));
        assert_eq!(c.length, 2);
        assert_eq!(c.bound_factor, q(16, 3));
        assert!((c.tau1_bound.unwrap() - 4.0).abs() < 1e-12);
        assert!(c.csv_row().starts_with("1,4,4/3,2,16/3,32,1.33"));
        let json = serde_json::to_value(&c).unwrap();
        assert_eq!(json["congestion"]["num"], 4);
        assert_eq!(json["congestion"]["den"], 3);
        for d in 1..=2 {
            for l in 3..=6 {
                let c = comparison_certificate(&GraphSpec::torus(d, l).unwrap(), None).unwrap();
                assert!(c.congestion <= int(l));
                assert!(c.length <= c.length_bound);
                assert!(c.bound_factor <= c.headline_factor);
            }
        }
    }

    #[test]
    fn end_to_end_small() {
        let e = end_to_end(&GraphSpec::torus(1, 4).unwrap(), 1).unwrap();
        assert!((e.tau1 - 1.0).abs() < 1e-10);
        assert!((e.tau2 - 0.75).abs() < 1e-10);
        assert!(e.bound_holds && e.headline_holds);
        let e = end_to_end(&GraphSpec::torus(1, 3).unwrap(), 2).unwrap();
        assert!((e.tau1 - e.tau2).abs() < 1e-12);
    }

    #[test]
    fn induced_flow_identity() {
        for (l, r) in [(3, 1), (3, 2), (4, 1), (4, 2)] {
            let c = induced_flow_check(&GraphSpec::torus(1, l).unwrap(), r).unwrap();
            assert!(c.agrees, "L={l} r={r}: {c:?}");
            assert_eq!(c.mismatches, 0);
        }
        let c = induced_flow_check(&GraphSpec::torus(2, 3).unwrap(), 1).unwrap();
        assert!(c.agrees);
    }

    #[test]
    fn rejects_complete_graphs() {
        assert!(edge_loads(&GraphSpec::complete(4).unwrap()).is_err());
    }
}
