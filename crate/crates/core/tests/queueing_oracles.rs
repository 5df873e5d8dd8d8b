mod common;

use approx::assert_relative_eq;
use rand::RngExt;
use ranslice_core::queueing::{
    blocking_all_exact, blocking_all_mc, blocking_prob_exact, erlang_b, scaling_check, state_space_size, steady_state_prob,
    BlockingScenario, BlockingSlice,
};

fn single_class(servers: u32, load: f64) -> BlockingScenario {
    BlockingScenario {
        reserved_bandwidth_hz: f64::from(servers) * 1e4,
        slices: vec![BlockingSlice { bandwidths_hz: vec![1e4], duration_s: 1e-3, arrival_rates: vec![load / 1e-3], deadline_s: None }],
    }
}

#[test]
fn erlang_b_reference_values() {
    // Frozen from the recursion: B(1, 1) = 1/2, B(2, 1) = 1/5, B(5, 3) ≈ 0.110054.
    assert_relative_eq!(erlang_b(1.0, 1), 0.5, max_relative = 1e-14);
    assert_relative_eq!(erlang_b(1.0, 2), 0.2, max_relative = 1e-14);
    assert_relative_eq!(erlang_b(3.0, 5), 0.110_054_347_826_087, max_relative = 1e-12);
    assert_eq!(erlang_b(2.0, 0), 1.0);
}

#[test]
fn exact_single_class_equals_both_erlang_routes() {
    let mut r = common::rng(3);
    for _ in 0..60 {
        let servers = r.random_range(1..40u32);
        let load = r.random_range(0.01..30.0);
        let exact = blocking_prob_exact(&single_class(servers, load), 0).unwrap();
        assert_relative_eq!(exact, erlang_b(load, servers), max_relative = 1e-10, epsilon = 1e-300);
        assert_relative_eq!(exact, common::erlang_b_recursion(load, servers), max_relative = 1e-10, epsilon = 1e-300);
    }
}

#[test]
fn exact_multi_class_equals_per_ue_enumeration() {
    let mut r = common::rng(4);
    for _ in 0..25 {
        let (slices, servers) = (r.random_range(1..4), r.random_range(2.0..6.0_f64).round());
        let sc = common::random_blocking_scenario(&mut r, slices, 3, servers);
        let exact = blocking_all_exact(&sc).unwrap();
        let brute = common::blocking_by_ue_enumeration(&sc);
        for (a, b) in exact.iter().zip(&brute) {
            assert_relative_eq!(a, b, max_relative = 1e-10, epsilon = 1e-15);
        }
    }
}

#[test]
fn steady_state_mass_sums_to_one() {
    let sc = BlockingScenario {
        reserved_bandwidth_hz: 3e4,
        slices: vec![
            BlockingSlice { bandwidths_hz: vec![1e4], duration_s: 1e-3, arrival_rates: vec![400.0], deadline_s: None },
            BlockingSlice { bandwidths_hz: vec![2e4], duration_s: 2e-3, arrival_rates: vec![100.0], deadline_s: None },
        ],
    };
    assert_eq!(state_space_size(&sc), Some(6));
    let states = [[0, 0], [1, 0], [2, 0], [3, 0], [0, 1], [1, 1]];
    let total: f64 = states.iter().map(|s| steady_state_prob(s, &sc).unwrap()).sum();
    assert_relative_eq!(total, 1.0, max_relative = 1e-12);
    // Product-form ratio between neighbouring states is ρ/n.
    let p10 = steady_state_prob(&[1, 0], &sc).unwrap();
    let p00 = steady_state_prob(&[0, 0], &sc).unwrap();
    assert_relative_eq!(p10 / p00, 0.4, max_relative = 1e-12);
    assert!(steady_state_prob(&[2, 1], &sc).is_err());
}

#[test]
fn monte_carlo_brackets_exact_blocking() {
    let mut r = common::rng(8);
    for _ in 0..3 {
        let sc = common::random_blocking_scenario(&mut r, 2, 2, 3.0);
        let exact = blocking_all_exact(&sc).unwrap();
        let mc = blocking_all_mc(&sc, 200_000, 17).unwrap();
        for (e, m) in exact.iter().zip(&mc) {
            assert!((e - m.estimate).abs() <= 3.0 * m.half_width + 1e-4, "exact {e} vs MC {m:?}");
        }
    }
}

#[test]
fn monte_carlo_error_shrinks_with_horizon() {
    let sc = single_class(3, 2.0);
    let exact = erlang_b(2.0, 3);
    let err = |n: u64| {
        let runs: Vec<f64> = (0..5).map(|s| (blocking_all_mc(&sc, n, s).unwrap()[0].estimate - exact).abs()).collect();
        runs.iter().sum::<f64>() / runs.len() as f64
    };
    assert!(err(1_000_000) < err(10_000));
}

#[test]
fn narrowed_slice_never_blocks_more() {
    let mut r = common::rng(21);
    for _ in 0..6 {
        let sc = common::random_blocking_scenario(&mut r, 2, 2, 10.0);
        for s in 0..2 {
            for q in [2, 4] {
                let c = scaling_check(&sc, s, q, 100_000, 1).unwrap();
                assert!(c.exact && c.own_holds, "{c:?}");
            }
        }
    }
}

#[test]
fn narrowing_can_hurt_a_wider_slice() {
    let sl = |w: f64| BlockingSlice { bandwidths_hz: vec![w], duration_s: 1e-3, arrival_rates: vec![500.0], deadline_s: None };
    let sc = BlockingScenario { reserved_bandwidth_hz: 2e5, slices: vec![sl(2e4), sl(1e4)] };
    let c = scaling_check(&sc, 1, 4, 100_000, 1).unwrap();
    assert!(c.own_holds && !c.holds);
    // Both sides cross-checked against per-UE enumeration.
    let before = common::blocking_by_ue_enumeration(&sc);
    let after = common::blocking_by_ue_enumeration(&sc.narrowed(1, 4));
    assert_relative_eq!(c.before[0], before[0], max_relative = 1e-10);
    assert_relative_eq!(c.after[0], after[0], max_relative = 1e-10);
    assert_relative_eq!(c.before[0], 2.346_429_331_899_985e-9, max_relative = 1e-9);
    assert_relative_eq!(c.after[0], 2.857_985_964_278_074e-9, max_relative = 1e-9);
}

#[test]
fn narrowing_beyond_the_deadline_is_rejected() {
    let mut sc = single_class(10, 0.5);
    sc.slices[0].deadline_s = Some(2e-3);
    assert!(scaling_check(&sc, 0, 2, 100_000, 1).is_ok());
    assert!(scaling_check(&sc, 0, 4, 100_000, 1).is_err());
}

#[test]
fn single_slice_narrowing_matches_erlang_b() {
    let sc = BlockingScenario {
        reserved_bandwidth_hz: 2.0,
        slices: vec![BlockingSlice { bandwidths_hz: vec![1.0], duration_s: 1.0, arrival_rates: vec![0.5], deadline_s: None }],
    };
    let c = scaling_check(&sc, 0, 2, 100_000, 1).unwrap();
    assert_relative_eq!(c.before[0], 1.0 / 13.0, max_relative = 1e-12);
    assert_relative_eq!(c.after[0], common::erlang_b_recursion(1.0, 4), max_relative = 1e-12);
    assert_relative_eq!(c.after[0], 1.0 / 65.0, max_relative = 1e-12);
    let same = scaling_check(&sc, 0, 1, 100_000, 1).unwrap();
    assert_eq!(same.before, same.after);
}
