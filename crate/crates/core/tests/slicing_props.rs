use proptest::prelude::*;

mod common;

use rand::RngExt;

use ranslice_core::channel::TopologyParams;
use ranslice_core::phy::{self, EmbbSliceRequest, SystemParams, UrllcSliceRequest};
use ranslice_core::slicing::{
    embb_acceptance, es_mask, grm_mask, restore_slot_vars, run_minislots, run_slot, Algorithm, Instance, Mode,
    SlicingConfig,
};

fn chosen_utility(u: &[f64], m: &[bool]) -> f64 {
    u.iter().zip(m).filter(|(_, b)| **b).map(|(x, _)| x).sum()
}

fn knapsack(weights: &[f64], cap: f64) -> impl Fn(&[bool]) -> bool + '_ {
    move |m: &[bool]| weights.iter().zip(m).filter(|(_, b)| **b).map(|(w, _)| w).sum::<f64>() <= cap
}

fn small_instance(seed: u64) -> Instance {
    let embb = vec![EmbbSliceRequest { num_ues: 2, min_rate_bps: 4e6 }];
    let urllc = vec![UrllcSliceRequest {
        num_ues: 2,
        deadline_s: 1e-3,
        decode_error: 2e-8,
        blocking_target: 1e-6,
        arrival_rate: 0.1,
        packet_bits: 160.0,
    }];
    Instance::new(&TopologyParams::default(), &SystemParams::default(), &embb, &urllc, Mode::Multicast, seed).unwrap()
}

proptest! {
    #[test]
    fn acceptance_is_the_exact_optimum(
        u in prop::collection::vec(-5.0..10.0f64, 1..7),
        w in prop::collection::vec(0.1..3.0f64, 7),
        cap in 0.0..6.0f64,
    ) {
        let feasible = knapsack(&w[..u.len()], cap);
        let b = embb_acceptance(&u, &feasible);
        prop_assert!(feasible(&b));
        let best = (0u32..1 << u.len())
            .map(|bits| (0..u.len()).map(|s| bits >> s & 1 == 1).collect::<Vec<bool>>())
            .filter(|m| feasible(m))
            .map(|m| chosen_utility(&u, &m))
            .fold(0.0, f64::max);
        prop_assert!((chosen_utility(&u, &b) - best).abs() <= 1e-12 * best.abs().max(1.0));
    }

    #[test]
    fn greedy_mask_is_optimal_under_a_cardinality_limit(u in prop::collection::vec(-1.0..5.0f64, 1..12), k in 0usize..12) {
        let feasible = |m: &[bool]| m.iter().filter(|b| **b).count() <= k;
        let g = grm_mask(&u, feasible);
        let e = es_mask(&u, feasible).unwrap();
        prop_assert!((chosen_utility(&u, &g) - chosen_utility(&u, &e)).abs() <= 1e-12);
    }

    #[test]
    fn exhaustive_mask_dominates_greedy(
        u in prop::collection::vec(0.01..5.0f64, 1..12),
        w in prop::collection::vec(0.1..3.0f64, 12),
        cap in 0.0..8.0f64,
    ) {
        let feasible = knapsack(&w[..u.len()], cap);
        let g = grm_mask(&u, &feasible);
        let e = es_mask(&u, &feasible).unwrap();
        prop_assert!(feasible(&g) && feasible(&e));
        prop_assert!(chosen_utility(&u, &e) >= chosen_utility(&u, &g) - 1e-12);
        prop_assert!(g.iter().zip(&u).all(|(b, x)| !*b || *x > 0.0));
    }

    #[test]
    fn restoration_respects_the_bandwidth(
        per_sample in prop::collection::vec(prop::collection::vec(0.0..4e6f64, 3), 1..8),
        drop in prop::collection::vec(prop::collection::vec(any::<bool>(), 3), 8),
        total in 1e6..1e7f64,
    ) {
        let accepted: Vec<Vec<bool>> = per_sample
            .iter()
            .zip(&drop)
            .map(|(w, d)| w.iter().zip(d).map(|(x, keep)| *keep && *x > 0.0).collect())
            .collect();
        let fits = |b: &[bool], w: &[f64]| b.iter().zip(w).filter(|(a, _)| **a).map(|(_, x)| x).sum::<f64>() <= total;
        let r = restore_slot_vars(&per_sample, &accepted, fits).unwrap();
        prop_assert!(fits(&r.accepted, &r.bandwidth_hz));
        for s in 0..3 {
            if !r.accepted[s] {
                prop_assert_eq!(r.bandwidth_hz[s], 0.0);
            }
        }
        prop_assert!(r.declined.iter().all(|&s| !r.accepted[s]));
    }
}

#[test]
fn alternation_traces_never_decrease() {
    for seed in 0..3 {
        let inst = small_instance(seed);
        let run = run_slot(&inst, &SlicingConfig::new(Algorithm::IaraAb, 4, 2)).unwrap();
        for o in &run.outcomes {
            assert!(o.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9), "trace {:?}", o.trace);
            assert!(o.iterations < 250);
        }
        let wsum: f64 = run.decision.embb_bandwidth_hz();
        assert!(wsum <= inst.system.total_bandwidth_hz * (1.0 + 1e-9));
    }
}

#[test]
fn slot_and_minislots_are_deterministic() {
    let inst = small_instance(7);
    let cfg = SlicingConfig::new(Algorithm::IaraAb, 4, 3);
    let a = run_slot(&inst, &cfg).unwrap();
    let b = run_slot(&inst, &cfg).unwrap();
    assert_eq!(a.decision, b.decision);
    let ma = run_minislots(&inst, &cfg, &a.decision).unwrap();
    let mb = run_minislots(&inst, &cfg, &b.decision).unwrap();
    assert_eq!(ma, mb);
    for m in &ma {
        for (j, p) in m.bs_power_w.iter().enumerate() {
            assert!(*p <= inst.system.bs_power_budget_w * (1.0 + 1e-6), "minislot {} BS {j} power {p}", m.t);
        }
    }
}

#[test]
fn mean_only_reserves_less_than_staffing() {
    let inst = small_instance(3);
    let slot = |alg| {
        let cfg = SlicingConfig::new(alg, 4, 2);
        let run = run_slot(&inst, &cfg).unwrap();
        run_minislots(&inst, &cfg, &run.decision).unwrap()
    };
    let staffed = slot(Algorithm::IaraAb);
    let mean = slot(Algorithm::IaraA);
    for (s, m) in staffed.iter().zip(&mean) {
        if s.mask == m.mask && s.mask.iter().any(|b| *b) {
            assert!(m.urllc_bandwidth_hz < s.urllc_bandwidth_hz);
        }
    }
}

#[test]
fn baseline_refuses_masking() {
    let inst = small_instance(1);
    let cfg = SlicingConfig::new(Algorithm::Irhs, 4, 2);
    let run = run_slot(&inst, &cfg).unwrap();
    // URLLC slices are all-or-nothing for the baseline.
    let ms = run_minislots(&inst, &cfg, &run.decision).unwrap();
    for m in &ms {
        let on = m.mask.iter().filter(|b| **b).count();
        assert!(on == 0 || on == m.mask.len());
    }
}

#[test]
fn greedy_mask_usually_matches_exhaustive_under_staffing() {
    // Utilities and channel uses both follow from a per-UE SNR, as in the
    // pipeline; feasibility is the staffed reservation against a random cap.
    // Agreement is empirical, not guaranteed.
    let mut r = common::rng(31);
    let (mut agree, trials) = (0, 200);
    for _ in 0..trials {
        let n = r.random_range(1..=12);
        let snr: Vec<f64> = (0..n).map(|_| 10f64.powf(r.random_range(0.0..3.0))).collect();
        let u: Vec<f64> = snr.iter().map(|x| x.ln_1p()).collect();
        let uses: Vec<f64> = snr.iter().map(|&x| phy::channel_uses(160.0, x, 2e-8).unwrap()).collect();
        let deadlines: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(1..=2)) * 1e-3).collect();
        let cap = r.random_range(2e4..3e5);
        let fits = |m: &[bool]| phy::staffed_bandwidth(m, &vec![0.1; n], &uses, 0.032, &deadlines, 1e-6).unwrap() <= cap;
        let g = grm_mask(&u, fits);
        let e = es_mask(&u, fits).unwrap();
        agree += usize::from((chosen_utility(&u, &g) - chosen_utility(&u, &e)).abs() <= 1e-12);
    }
    eprintln!("greedy = exhaustive on {agree}/{trials} staffed instances");
    assert!(agree as f64 >= 0.95 * trials as f64, "{agree}/{trials}");
}

#[test]
fn empty_request_set_gives_a_trivial_slot() {
    let inst = Instance::new(&TopologyParams::default(), &SystemParams::default(), &[], &[], Mode::Multicast, 1).unwrap();
    let cfg = SlicingConfig::new(Algorithm::IaraAb, 2, 2);
    let run = run_slot(&inst, &cfg).unwrap();
    assert!(run.decision.accepted.is_empty());
    for m in run_minislots(&inst, &cfg, &run.decision).unwrap() {
        assert_eq!(m.total_utility, 0.0);
        assert!(m.bs_power_w.iter().all(|p| *p == 0.0));
    }
}
