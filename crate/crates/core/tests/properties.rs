//! Property tests over randomly drawn small instances.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use zrp_core::coupling::{draw_event, init_coupling, Phase};
use zrp_core::model::{sample_uniform, transitions, GraphSpec};
use zrp_core::spectral::{build_generator, exact_gap, rayleigh_quotient_values, time_grid, tv_curve};
use zrp_core::stats::{skellam_pmf, skellam_tail};

fn graph() -> impl Strategy<Value = GraphSpec> {
    prop_oneof![
        (3usize..=6).prop_map(|n| GraphSpec::complete(n).unwrap()),
        (3usize..=6).prop_map(|l| GraphSpec::torus(1, l).unwrap()),
        Just(GraphSpec::torus(2, 3).unwrap()),
    ]
}

fn stage_key(p: Phase) -> (usize, usize) {
    match p {
        Phase::Stage { j, step } => (j, usize::from(step != zrp_core::coupling::Step::One)),
        Phase::Coalesced => (usize::MAX, 0),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transitions_conserve_particles(g in graph(), r in 0usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eta = sample_uniform(g.vertex_count(), r, &mut rng);
        let out = transitions(&g, &eta);
        let total: f64 = out.iter().map(|(_, q)| q).sum();
        prop_assert!((total - eta.nonempty_count() as f64).abs() < 1e-12);
        for (y, _) in &out {
            prop_assert_eq!(y.particles(), r);
        }
    }

    #[test]
    fn generator_is_symmetric(g in graph(), r in 1usize..4) {
        let gen = build_generator(&g, r).unwrap();
        prop_assert!(gen.asymmetry() < 1e-12);
    }

    #[test]
    fn rayleigh_quotient_dominates_gap(n in 3usize..6, r in 1usize..4, seed in any::<u64>()) {
        let gen = build_generator(&GraphSpec::complete(n).unwrap(), r).unwrap();
        let gap = exact_gap(&gen).unwrap().gap;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f: Vec<f64> = (0..gen.dimension()).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        if let Ok(q) = rayleigh_quotient_values(&gen, &f) {
            prop_assert!(q >= gap - 1e-9);
        }
    }

    #[test]
    fn tv_is_non_increasing(l in 3usize..6, r in 1usize..4) {
        let g = GraphSpec::torus(1, l).unwrap();
        let gen = build_generator(&g, r).unwrap();
        let start = zrp_core::model::Configuration::stacked(l, 0, r as u32);
        let curve = tv_curve(&gen, &start, &time_grid(4.0, 40)).unwrap();
        prop_assert!(curve.is_non_increasing(1e-10));
    }

    #[test]
    fn coupling_phases_only_move_forward(n in 3usize..7, r in 1usize..6, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = sample_uniform(n, r, &mut rng);
        let mut state = init_coupling(&x0, &mut rng).unwrap().with_invariant_checks(true);
        let mut last = stage_key(state.phase());
        for _ in 0..400 {
            let draw = draw_event(n, &mut rng);
            state.advance(draw).unwrap();
            let key = stage_key(state.phase());
            prop_assert!(key >= last);
            last = key;
            prop_assert_eq!(state.x().configuration().particles(), r);
            prop_assert_eq!(state.y().configuration().particles(), r);
        }
    }

    #[test]
    fn skellam_tail_is_consistent(lambda in 0.1f64..60.0, m in 1i64..30) {
        let upper = skellam_tail(lambda, m).unwrap();
        let lower = skellam_tail(lambda, -m + 1).unwrap();
        // P(X - Y >= m) = P(Y - X >= m) = 1 - P(X - Y >= -m + 1).
        prop_assert!((upper - (1.0 - lower)).abs() < 1e-10);
        let next = skellam_tail(lambda, m + 1).unwrap();
        prop_assert!((upper - next - skellam_pmf(lambda, m).unwrap()).abs() < 1e-10);
    }
}
