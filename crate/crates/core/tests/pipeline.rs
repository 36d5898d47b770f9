//! Cross-module checks on small instances.

use zrp_core::coupling::{default_start, init_coupling, run_until};
use zrp_core::flow::{edge_loads, end_to_end, induced_flow_check};
use zrp_core::model::{enumerate_configurations, GraphSpec};
use zrp_core::reversal::{build_zeta_chain, forward_reverse_w_agreement, reverse_chain, ExitRule};
use zrp_core::seed::replica_rng;
use zrp_core::spectral::{
    build_generator, exact_gap, exact_gap_with, rayleigh_quotient, uniformization, GapMethod, LanczosOptions,
    SolverChoice, TestFunction, TestFunctionKind,
};

#[test]
fn single_particle_gaps_match_walk_spectra() {
    for l in 3..=8 {
        let g = GraphSpec::torus(1, l).unwrap();
        let gap = exact_gap(&build_generator(&g, 1).unwrap()).unwrap().gap;
        let oracle = 1.0 - (2.0 * std::f64::consts::PI / l as f64).cos();
        assert!((gap - oracle).abs() < 1e-8, "L={l}: {gap} vs {oracle}");
    }
    for n in 2..=6 {
        let g = GraphSpec::complete(n).unwrap();
        let gap = exact_gap(&build_generator(&g, 1).unwrap()).unwrap().gap;
        assert!((gap - n as f64 / (n - 1) as f64).abs() < 1e-8);
    }
}

#[test]
fn iterative_and_dense_gaps_agree() {
    let g = GraphSpec::torus(2, 3).unwrap();
    let gen = build_generator(&g, 3).unwrap();
    let dense = exact_gap_with(&gen, SolverChoice::Dense, LanczosOptions::default()).unwrap();
    let iter = exact_gap_with(&gen, SolverChoice::Iterative, LanczosOptions::default()).unwrap();
    assert_eq!(dense.method, GapMethod::Dense);
    assert_eq!(iter.method, GapMethod::Iterative);
    assert!((dense.gap - iter.gap).abs() < 1e-8, "{} vs {}", dense.gap, iter.gap);
}

#[test]
fn wilson_quotient_bounds_the_gap() {
    for l in 3..=6 {
        let g = GraphSpec::torus(1, l).unwrap();
        for r in 1..=3 {
            let gen = build_generator(&g, r).unwrap();
            let gap = exact_gap(&gen).unwrap().gap;
            for kind in [TestFunctionKind::WilsonTorus, TestFunctionKind::WilsonPaper] {
                let f = TestFunction::wilson(&g, kind).unwrap();
                assert!(rayleigh_quotient(&gen, &f).unwrap() >= gap - 1e-10);
            }
        }
    }
}

#[test]
fn comparison_chain_holds_on_small_rings() {
    for l in 3..=4 {
        let g = GraphSpec::torus(1, l).unwrap();
        assert!(edge_loads(&g).unwrap().all_equal);
        for r in 1..=2 {
            let e = end_to_end(&g, r).unwrap();
            assert!(e.bound_holds && e.headline_holds);
            assert!(induced_flow_check(&g, r).unwrap().agrees);
        }
    }
}

#[test]
fn coupled_copy_follows_the_exact_law() {
    let (n, r, t) = (4, 2, 0.7);
    let g = GraphSpec::complete(n).unwrap();
    let gen = build_generator(&g, r).unwrap();
    let x0 = default_start(n, r);
    let mut p0 = vec![0.0; gen.dimension()];
    p0[gen.index_of(&x0).unwrap()] = 1.0;
    let exact = uniformization::evolve(gen.rate_rows(), &p0, t, 1e-12, 1_000_000).unwrap();
    let replicas = 20_000;
    let mut counts = vec![0.0; gen.dimension()];
    for i in 0..replicas {
        let mut rng = replica_rng(77, i);
        let state = init_coupling(&x0, &mut rng).unwrap();
        let state = run_until(state, t, &mut rng).unwrap();
        counts[gen.index_of(&state.x().configuration()).unwrap()] += 1.0 / replicas as f64;
    }
    let tv: f64 = counts.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
    assert!(tv < 0.03, "TV {tv}");
    assert_eq!(enumerate_configurations(n, r).unwrap().len(), gen.dimension());
}

#[test]
fn zeta_pipeline_is_consistent() {
    let chain = build_zeta_chain(4, 1, ExitRule::Balanced).unwrap();
    let rev = reverse_chain(&chain, false);
    assert_eq!(rev.pi(), chain.pi());
    let a = forward_reverse_w_agreement(&chain, &[0.25, 1.0, 3.0]).unwrap();
    assert!(a.max_difference < 1e-10);
}
