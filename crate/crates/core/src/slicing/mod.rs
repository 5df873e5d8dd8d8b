//! Slot-level admission and minislot-level masking.
//!
//! A slot decision (which eMBB slices are admitted and with how much
//! bandwidth) is taken once per slot from `M` generated channel samples.
//! Each sample is optimized by alternating between the acceptance bits, the
//! URLLC resource mask and the convex subproblem; the per-sample answers are
//! then averaged and repaired until every sample is feasible. Every minislot
//! then masks URLLC subslices and beamforms on the sensed channel.

mod pipeline;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::phy::Reservation;

pub use pipeline::{
    run_minislots, run_slot, schedule_minislot, validate_slot, Instance, MinislotDecision, SampleOutcome, SlicingConfig,
    SlotDecision, SlotRun,
};

/// Samples needed for the sampled QoS constraints to hold with confidence
/// `1 − θ` at outage level `ε`, for `n_ues` UEs and `J·K` antennas.
pub fn sample_count(n_embb_ues: usize, n_urllc_ues: usize, num_bs: usize, antennas: usize, eps: f64, theta: f64) -> Result<u64> {
    if !(eps > 0.0 && eps < 1.0) || !(theta > 0.0 && theta < 1.0) {
        return Err(domain("ε and θ must lie in (0, 1)"));
    }
    let d = ((n_embb_ues + n_urllc_ues) * num_bs * antennas) as f64;
    if d <= 1.0 {
        return Err(domain("sample bound needs (N^e + N^u)·J·K > 1"));
    }
    let l = (1.0 / theta).ln();
    let m = (d - 1.0 + l + (2.0 * (d - 1.0) * l + l * l).sqrt()) / eps;
    Ok(m.ceil() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    /// Greedy mask with square-root staffing.
    #[serde(rename = "iara_ab")]
    IaraAb,
    /// Exhaustive mask search with square-root staffing.
    #[serde(rename = "es_ab")]
    EsAb,
    /// Greedy mask with mean-only reservation.
    #[serde(rename = "iara_a")]
    IaraA,
    /// Greedy slice-level admission with dedicated URLLC bandwidth.
    #[serde(rename = "irhs")]
    Irhs,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::IaraAb, Algorithm::EsAb, Algorithm::IaraA, Algorithm::Irhs];

    pub fn reservation(self) -> Reservation {
        match self {
            Algorithm::IaraAb | Algorithm::EsAb => Reservation::Staffed,
            Algorithm::IaraA => Reservation::MeanOnly,
            Algorithm::Irhs => Reservation::Dedicated,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::IaraAb => "iara_ab",
            Algorithm::EsAb => "es_ab",
            Algorithm::IaraA => "iara_a",
            Algorithm::Irhs => "irhs",
        }
    }
}

/// How eMBB acceptance ranks feasible sets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcceptancePolicy {
    /// Maximize the summed eMBB utility.
    #[default]
    Utility,
    /// Serve as many slices as possible; utility only breaks ties.
    Feasibility,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Multicast,
    /// Every eMBB UE is served as its own single-UE slice.
    Unicast,
}

/// Relative slack used when comparing utilities for ties.
const TIE_TOLERANCE: f64 = 1e-12;

fn nearly_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// `true` if acceptance vector `a` is preferred to `b` at equal utility:
/// more slices first, then the lexicographically smallest set of ids.
fn tie_preferred(a: &[bool], b: &[bool]) -> bool {
    let (na, nb) = (a.iter().filter(|x| **x).count(), b.iter().filter(|x| **x).count());
    if na != nb {
        return na > nb;
    }
    let ids = |v: &[bool]| v.iter().enumerate().filter(|(_, x)| **x).map(|(i, _)| i).collect::<Vec<_>>();
    ids(a) < ids(b)
}

/// Exact eMBB acceptance by enumeration: the feasible `b` maximizing
/// `Σ b_s·u_s`. The empty set is always allowed.
pub fn embb_acceptance(utilities: &[f64], mut feasible: impl FnMut(&[bool]) -> bool) -> Vec<bool> {
    let n = utilities.len();
    assert!(n <= 20, "acceptance enumeration supports at most 20 slices");
    let mut best = vec![false; n];
    let mut best_u = 0.0;
    for bits in 1u32..(1 << n) {
        let b: Vec<bool> = (0..n).map(|s| bits >> s & 1 == 1).collect();
        let u: f64 = utilities.iter().zip(&b).filter(|(_, x)| **x).map(|(u, _)| u).sum();
        let better = if nearly_equal(u, best_u) { tie_preferred(&b, &best) } else { u > best_u };
        if better && feasible(&b) {
            best = b;
            best_u = u;
        }
    }
    best
}

/// Greedy resource mask: candidates are visited by decreasing utility
/// (ties to the lower index) and kept when the enlarged mask stays
/// feasible. Candidates with non-positive utility are never added.
pub fn grm_mask(utilities: &[f64], mut feasible: impl FnMut(&[bool]) -> bool) -> Vec<bool> {
    let mut order: Vec<usize> = (0..utilities.len()).collect();
    order.sort_by(|&a, &b| utilities[b].total_cmp(&utilities[a]).then(a.cmp(&b)));
    let mut mask = vec![false; utilities.len()];
    for i in order {
        if !(utilities[i] > 0.0) {
            break;
        }
        mask[i] = true;
        if !feasible(&mask) {
            mask[i] = false;
        }
    }
    mask
}

/// Largest number of candidates for the exhaustive mask search.
pub const ES_MAX_CANDIDATES: usize = 16;

/// Exhaustive mask search over subsets of the positive-utility candidates,
/// visited by decreasing total utility; the first feasible subset wins.
pub fn es_mask(utilities: &[f64], mut feasible: impl FnMut(&[bool]) -> bool) -> Result<Vec<bool>> {
    if utilities.len() > ES_MAX_CANDIDATES {
        return Err(domain(format!("exhaustive search supports at most {ES_MAX_CANDIDATES} candidates")));
    }
    let pos: Vec<usize> = (0..utilities.len()).filter(|&i| utilities[i] > 0.0).collect();
    let mut subsets: Vec<(f64, u32)> = (0u32..(1 << pos.len()))
        .map(|bits| {
            let u = pos.iter().enumerate().filter(|(k, _)| bits >> k & 1 == 1).map(|(_, &i)| utilities[i]).sum();
            (u, bits)
        })
        .collect();
    let to_mask = |bits: u32| {
        let mut m = vec![false; utilities.len()];
        for (k, &i) in pos.iter().enumerate() {
            m[i] = bits >> k & 1 == 1;
        }
        m
    };
    subsets.sort_by(|a, b| {
        b.0.total_cmp(&a.0).then_with(|| {
            let (ma, mb) = (to_mask(a.1), to_mask(b.1));
            if tie_preferred(&ma, &mb) {
                std::cmp::Ordering::Less
            } else if tie_preferred(&mb, &ma) {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        })
    });
    for (_, bits) in subsets {
        let m = to_mask(bits);
        if bits == 0 || feasible(&m) {
            return Ok(m);
        }
    }
    Ok(vec![false; utilities.len()])
}

/// Restored slot variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Restored {
    pub accepted: Vec<bool>,
    pub bandwidth_hz: Vec<f64>,
    /// `C_s`: number of samples that accepted each slice.
    pub counts: Vec<usize>,
    /// Slices declined during repair, in order.
    pub declined: Vec<usize>,
}

/// Averages per-sample bandwidths (zero where a sample declined the slice)
/// and declines the least-accepted slice until `feasible` holds for the
/// fixed slot variables.
pub fn restore_slot_vars(
    per_sample_bandwidth: &[Vec<f64>],
    per_sample_accepted: &[Vec<bool>],
    mut feasible: impl FnMut(&[bool], &[f64]) -> bool,
) -> Result<Restored> {
    let m = per_sample_bandwidth.len();
    if m == 0 || per_sample_accepted.len() != m {
        return Err(domain("restoration needs at least one solved sample"));
    }
    let n = per_sample_bandwidth[0].len();
    let mut bandwidth = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for (w, b) in per_sample_bandwidth.iter().zip(per_sample_accepted) {
        for s in 0..n {
            if b[s] {
                bandwidth[s] += w[s];
                counts[s] += 1;
            }
        }
    }
    for w in &mut bandwidth {
        *w /= m as f64;
    }
    let mut accepted: Vec<bool> = bandwidth.iter().map(|&w| w > 0.0).collect();
    for (w, a) in bandwidth.iter_mut().zip(&accepted) {
        if !a {
            *w = 0.0;
        }
    }
    let mut declined = Vec::new();
    while !feasible(&accepted, &bandwidth) {
        let Some(s) = (0..n).filter(|&s| accepted[s]).min_by_key(|&s| (counts[s], s)) else {
            return Err(crate::Error::Infeasible("no slices left to decline but the slot is still infeasible".into()));
        };
        accepted[s] = false;
        bandwidth[s] = 0.0;
        declined.push(s);
    }
    Ok(Restored { accepted, bandwidth_hz: bandwidth, counts, declined })
}
