//! Multi-rate loss system for URLLC transmissions sharing a reserved band.
//!
//! Every URLLC UE generates packets as a Poisson stream with rate `λ_i`.
//! A packet occupies `ω_i` Hz for `d_s` seconds and is lost when the free
//! bandwidth is short. A UE may hold several packets in flight. Writing
//! `n_i` for UE i's in-flight count and `ρ_i = λ_i·d_s`, the stationary law
//! is the product form
//!
//! ```text
//! π(n) = G · Π_i ρ_i^{n_i} / n_i!     over  {n : Σ_i n_i·ω_i ≤ W}
//! ```
//!
//! and it is insensitive to the holding-time distribution. UEs with equal
//! bandwidth are pooled into one class with load `Σ ρ_i`, which leaves the
//! occupancy law unchanged and keeps the enumeration small.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::RngExt;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{domain, Error, Result};
use crate::rng::{substream, Domain};

/// Largest number of aggregated states enumerated exactly.
pub const STATE_CAP: u128 = 1 << 20;
/// Replications used by the Monte Carlo estimator.
pub const MC_REPLICATIONS: usize = 20;
/// Minimum number of counted arrivals for a Monte Carlo run.
pub const MIN_MC_ARRIVALS: u64 = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockingSlice {
    /// Per-UE transmission bandwidth ω in Hz.
    pub bandwidths_hz: Vec<f64>,
    /// Transmission duration d in seconds.
    pub duration_s: f64,
    /// Per-UE packet arrival rate λ per second.
    pub arrival_rates: Vec<f64>,
    /// Deadline bounding how far `d` may be stretched.
    #[serde(default)]
    pub deadline_s: Option<f64>,
}

impl BlockingSlice {
    /// Largest per-UE load `λ_i·d`.
    pub fn load(&self) -> f64 {
        self.arrival_rates.iter().map(|l| l * self.duration_s).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockingScenario {
    pub reserved_bandwidth_hz: f64,
    pub slices: Vec<BlockingSlice>,
}

impl BlockingScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.reserved_bandwidth_hz >= 0.0) {
            return Err(domain("reserved bandwidth must be non-negative"));
        }
        if self.slices.is_empty() {
            return Err(domain("blocking scenario needs at least one slice"));
        }
        for (s, sl) in self.slices.iter().enumerate() {
            if sl.bandwidths_hz.is_empty() || sl.bandwidths_hz.len() != sl.arrival_rates.len() {
                return Err(domain(format!("slice {s} needs one bandwidth and one arrival rate per UE")));
            }
            if !(sl.duration_s > 0.0) {
                return Err(domain(format!("slice {s} needs a positive duration")));
            }
            if sl.bandwidths_hz.iter().chain(&sl.arrival_rates).any(|&x| !(x > 0.0)) {
                return Err(domain(format!("slice {s} has a non-positive bandwidth or arrival rate")));
            }
        }
        Ok(())
    }

    fn tolerance(&self) -> f64 {
        1e-12 * self.reserved_bandwidth_hz.max(1.0)
    }

    fn classes(&self) -> Vec<(f64, f64)> {
        let mut classes: Vec<(f64, f64)> = Vec::new();
        for sl in &self.slices {
            for (&w, &l) in sl.bandwidths_hz.iter().zip(&sl.arrival_rates) {
                let rho = l * sl.duration_s;
                match classes.iter_mut().find(|(cw, _)| cw.to_bits() == w.to_bits()) {
                    Some(c) => c.1 += rho,
                    None => classes.push((w, rho)),
                }
            }
        }
        classes
    }

    /// The same system with slice `s` narrowed by `q`: bandwidth `ω/q`,
    /// duration `q·d`.
    pub fn narrowed(&self, s: usize, q: u32) -> Self {
        let mut out = self.clone();
        let q = f64::from(q);
        let sl = &mut out.slices[s];
        for w in &mut sl.bandwidths_hz {
            *w /= q;
        }
        sl.duration_s *= q;
        out
    }
}

/// Occupied bandwidth and unnormalized log-weight of every admissible
/// aggregated state.
struct StateTable {
    used: Vec<f64>,
    log_weight: Vec<f64>,
    log_norm: f64,
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n + 1];
    for k in 1..=n {
        t[k] = t[k - 1] + (k as f64).ln();
    }
    t
}

fn enumerate(scenario: &BlockingScenario) -> Result<StateTable> {
    let classes = scenario.classes();
    let w = scenario.reserved_bandwidth_hz;
    let tol = scenario.tolerance();
    let max_count = classes.iter().map(|(cw, _)| ((w + tol) / cw).floor() as usize).max().unwrap_or(0);
    let lnf = ln_factorials(max_count);
    let mut table = StateTable { used: Vec::new(), log_weight: Vec::new(), log_norm: 0.0 };

    fn rec(
        classes: &[(f64, f64)],
        lnf: &[f64],
        limit: f64,
        used: f64,
        logw: f64,
        table: &mut StateTable,
    ) -> Result<()> {
        let Some((&(cw, rho), rest)) = classes.split_first() else {
            if table.used.len() as u128 >= STATE_CAP {
                return Err(Error::StateSpaceTooLarge { states: STATE_CAP + 1, cap: STATE_CAP });
            }
            table.used.push(used);
            table.log_weight.push(logw);
            return Ok(());
        };
        let ln_rho = rho.ln();
        let mut n = 0usize;
        while used + n as f64 * cw <= limit {
            let lw = logw + n as f64 * ln_rho - lnf[n];
            rec(rest, lnf, limit, used + n as f64 * cw, lw, table)?;
            n += 1;
        }
        Ok(())
    }

    if let Some(states) = state_space_size(scenario) {
        if states > STATE_CAP {
            return Err(Error::StateSpaceTooLarge { states, cap: STATE_CAP });
        }
    }
    rec(&classes, &lnf, w + tol, 0.0, 0.0, &mut table)?;
    let top = table.log_weight.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = table.log_weight.iter().map(|l| (l - top).exp()).sum();
    table.log_norm = top + sum.ln();
    Ok(table)
}

/// Number of admissible aggregated states, `None` when it overflows `u128`.
pub fn state_space_size(scenario: &BlockingScenario) -> Option<u128> {
    let classes = scenario.classes();
    let limit = scenario.reserved_bandwidth_hz + scenario.tolerance();
    fn rec(classes: &[(f64, f64)], budget: f64, cap: u128) -> Option<u128> {
        let Some((&(cw, _), rest)) = classes.split_first() else {
            return Some(1);
        };
        let mut total: u128 = 0;
        let mut n = 0usize;
        while n as f64 * cw <= budget {
            total = total.checked_add(rec(rest, budget - n as f64 * cw, cap)?)?;
            if total > cap {
                return Some(total);
            }
            n += 1;
        }
        Some(total)
    }
    rec(&classes, limit, STATE_CAP)
}

/// Stationary probability of per-UE in-flight counts, listed slice by slice
/// in UE order. Binary vectors are the special case of single packets.
pub fn steady_state_prob(state: &[u32], scenario: &BlockingScenario) -> Result<f64> {
    scenario.validate()?;
    let total_ues: usize = scenario.slices.iter().map(|s| s.bandwidths_hz.len()).sum();
    if state.len() != total_ues {
        return Err(domain(format!("state has {} entries for {total_ues} UEs", state.len())));
    }
    let mut used = 0.0;
    let mut logw = 0.0;
    let mut k = 0;
    let lnf = ln_factorials(state.iter().copied().max().unwrap_or(0) as usize);
    for sl in &scenario.slices {
        for (&w, &l) in sl.bandwidths_hz.iter().zip(&sl.arrival_rates) {
            let n = state[k] as usize;
            used += n as f64 * w;
            logw += n as f64 * (l * sl.duration_s).ln() - lnf[n];
            k += 1;
        }
    }
    if used > scenario.reserved_bandwidth_hz + scenario.tolerance() {
        return Err(domain("state exceeds the reserved bandwidth"));
    }
    let table = enumerate(scenario)?;
    Ok((logw - table.log_norm).exp())
}

fn blocking_from_table(scenario: &BlockingScenario, table: &StateTable) -> Vec<f64> {
    let limit = scenario.reserved_bandwidth_hz + scenario.tolerance();
    scenario
        .slices
        .iter()
        .map(|sl| {
            let total_rate: f64 = sl.arrival_rates.iter().sum();
            let mut p = 0.0;
            for (&w, &l) in sl.bandwidths_hz.iter().zip(&sl.arrival_rates) {
                let blocked: f64 = table
                    .used
                    .iter()
                    .zip(&table.log_weight)
                    .filter(|(u, _)| **u + w > limit)
                    .map(|(_, lw)| (lw - table.log_norm).exp())
                    .sum();
                p += l / total_rate * blocked.min(1.0);
            }
            p
        })
        .collect()
}

/// Exact blocking probability of every slice: the arrival-weighted chance
/// that a new packet of the slice finds too little free bandwidth.
pub fn blocking_all_exact(scenario: &BlockingScenario) -> Result<Vec<f64>> {
    scenario.validate()?;
    let table = enumerate(scenario)?;
    Ok(blocking_from_table(scenario, &table))
}

pub fn blocking_prob_exact(scenario: &BlockingScenario, slice: usize) -> Result<f64> {
    check_slice(scenario, slice)?;
    Ok(blocking_all_exact(scenario)?[slice])
}

fn check_slice(scenario: &BlockingScenario, slice: usize) -> Result<()> {
    if slice >= scenario.slices.len() {
        return Err(domain(format!("slice {slice} out of range")));
    }
    Ok(())
}

/// Erlang-B loss probability `(ρⁿ/n!) / Σ_{k≤n} ρᵏ/k!` by the stable
/// recursion `B_k = ρ·B_{k−1} / (k + ρ·B_{k−1})`.
pub fn erlang_b(load: f64, servers: u32) -> f64 {
    let mut b = 1.0;
    for k in 1..=servers {
        b = load * b / (f64::from(k) + load * b);
    }
    b
}

/// Blocking seen by a slice-k arrival given the bandwidth left free by all
/// slices other than `s`, with slice `s` homogeneous at bandwidth `ω_s`
/// scaled by `q` and load `ρ_s`. The in-flight count of slice `s` is then a
/// truncated Poisson variable with mean `q·ρ_s`; this ratio uses the
/// ceiling-based bounds of that count and is exact when the bandwidths
/// divide evenly.
pub fn conditional_blocking_closed_form(free_hz: f64, omega_s: f64, omega_k_min: f64, omega_s_max: f64, q: u32, rho_s: f64) -> f64 {
    let qf = f64::from(q);
    let narrow = omega_s / qf;
    let upper = (free_hz / narrow - 1e-12).ceil().max(0.0) as u32;
    let lower = upper as i64 - (omega_k_min / (omega_s_max / qf) - 1e-12).ceil() as i64 + 1;
    let load = qf * rho_s;
    let lnf = ln_factorials(upper as usize);
    let term = |n: u32| (f64::from(n) * load.ln() - lnf[n as usize]).exp();
    let den: f64 = (0..=upper).map(term).sum();
    let num: f64 = (lower.max(0) as u32..=upper).map(term).sum();
    num / den
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// Half-width of the 95% confidence interval across replications.
    pub half_width: f64,
    pub arrivals: u64,
    pub blocked: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Departure(f64, f64);

impl Eq for Departure {}

impl PartialOrd for Departure {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Departure {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// One replication: `(arrivals, blocked)` per slice after warm-up.
fn simulate(scenario: &BlockingScenario, counted: u64, seed: u64, rep: u32) -> Vec<(u64, u64)> {
    let mut ues: Vec<(usize, f64, f64)> = Vec::new();
    let mut cum = Vec::new();
    let mut total = 0.0;
    for (s, sl) in scenario.slices.iter().enumerate() {
        for (&w, &l) in sl.bandwidths_hz.iter().zip(&sl.arrival_rates) {
            total += l;
            cum.push(total);
            ues.push((s, w, sl.duration_s));
        }
    }
    let limit = scenario.reserved_bandwidth_hz + scenario.tolerance();
    let d_max = scenario.slices.iter().map(|s| s.duration_s).fold(0.0, f64::max);
    let warmup_time = 20.0 * d_max;
    let warmup_arrivals = (counted / 10).max(1000);

    let mut rng = substream(seed, Domain::LossSimulation, 0, 0, rep);
    let mut heap: BinaryHeap<Reverse<Departure>> = BinaryHeap::new();
    let mut used = 0.0;
    let mut now = 0.0;
    let mut seen = 0u64;
    let mut out = vec![(0u64, 0u64); scenario.slices.len()];
    let mut n_counted = 0u64;
    while n_counted < counted {
        now += rng.sample::<f64, _>(Exp1) / total;
        while let Some(Reverse(Departure(t, w))) = heap.peek().copied() {
            if t > now {
                break;
            }
            heap.pop();
            used -= w;
        }
        if heap.is_empty() {
            used = 0.0;
        }
        let x = rng.random::<f64>() * total;
        let i = cum.partition_point(|&c| c <= x).min(ues.len() - 1);
        let (s, w, d) = ues[i];
        let admitted = used + w <= limit;
        if admitted {
            used += w;
            heap.push(Reverse(Departure(now + d, w)));
        }
        seen += 1;
        if seen > warmup_arrivals && now > warmup_time {
            n_counted += 1;
            out[s].0 += 1;
            if !admitted {
                out[s].1 += 1;
            }
        }
    }
    out
}

/// Monte Carlo blocking estimate for every slice from `arrivals` counted
/// arrivals (all slices together), split over independent replications.
pub fn blocking_all_mc(scenario: &BlockingScenario, arrivals: u64, seed: u64) -> Result<Vec<McEstimate>> {
    scenario.validate()?;
    if arrivals < MIN_MC_ARRIVALS {
        return Err(domain(format!("Monte Carlo horizon needs at least {MIN_MC_ARRIVALS} arrivals")));
    }
    let per_rep = arrivals.div_ceil(MC_REPLICATIONS as u64);
    let reps: Vec<Vec<(u64, u64)>> =
        (0..MC_REPLICATIONS as u32).into_par_iter().map(|r| simulate(scenario, per_rep, seed, r)).collect();
    let t = StudentsT::new(0.0, 1.0, (MC_REPLICATIONS - 1) as f64)
        .map_err(|e| Error::Numerical(e.to_string()))?
        .inverse_cdf(0.975);
    Ok((0..scenario.slices.len())
        .map(|k| {
            let arrivals: u64 = reps.iter().map(|r| r[k].0).sum();
            let blocked: u64 = reps.iter().map(|r| r[k].1).sum();
            let ps: Vec<f64> =
                reps.iter().filter(|r| r[k].0 > 0).map(|r| r[k].1 as f64 / r[k].0 as f64).collect();
            let estimate = if arrivals > 0 { blocked as f64 / arrivals as f64 } else { 0.0 };
            let half_width = if ps.len() > 1 {
                let mean = ps.iter().sum::<f64>() / ps.len() as f64;
                let var = ps.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (ps.len() - 1) as f64;
                t * (var / ps.len() as f64).sqrt()
            } else {
                0.0
            };
            McEstimate { estimate, half_width, arrivals, blocked }
        })
        .collect())
}

pub fn blocking_prob_mc(scenario: &BlockingScenario, slice: usize, arrivals: u64, seed: u64) -> Result<McEstimate> {
    check_slice(scenario, slice)?;
    Ok(blocking_all_mc(scenario, arrivals, seed)?[slice])
}

/// Outcome of narrowing one slice's transmissions by a factor `q`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCheck {
    pub slice: usize,
    pub q: u32,
    /// Blocking of every slice at `(ω, d)`.
    pub before: Vec<f64>,
    /// Blocking of every slice at `(ω/q, q·d)` for the narrowed slice.
    pub after: Vec<f64>,
    pub exact: bool,
    pub tolerance: f64,
    /// `after ≤ before + tolerance` for the narrowed slice.
    pub own_holds: bool,
    /// `after ≤ before + tolerance` for every slice. Narrowing one slice can
    /// raise the blocking of a wider slice when `W^u` is only moderately
    /// large, so this may fail while `own_holds` does not.
    pub holds: bool,
}

/// Compares blocking before and after narrowing slice `s` by `q`. Uses exact
/// enumeration, or Monte Carlo (tolerance 3 CI half-widths) when either
/// state space exceeds the cap.
pub fn scaling_check(scenario: &BlockingScenario, s: usize, q: u32, mc_arrivals: u64, seed: u64) -> Result<ScalingCheck> {
    scenario.validate()?;
    check_slice(scenario, s)?;
    if q == 0 {
        return Err(domain("scaling factor must be a positive integer"));
    }
    let sl = &scenario.slices[s];
    if let Some(deadline) = sl.deadline_s {
        if f64::from(q) * sl.duration_s > deadline * (1.0 + 1e-12) {
            return Err(domain(format!("q·d = {} exceeds the deadline {deadline}", f64::from(q) * sl.duration_s)));
        }
    }
    if sl.load() >= 1.0 {
        log::warn!("slice {s} load {} is not below 1; the narrowing bound need not hold", sl.load());
    }
    let narrowed = scenario.narrowed(s, q);
    let exact = (blocking_all_exact(scenario), blocking_all_exact(&narrowed));
    let (before, after, tolerance, exact) = match exact {
        (Ok(b), Ok(a)) => (b, a, 1e-12, true),
        (Err(Error::StateSpaceTooLarge { .. }), _) | (_, Err(Error::StateSpaceTooLarge { .. })) => {
            let b = blocking_all_mc(scenario, mc_arrivals, seed)?;
            let a = blocking_all_mc(&narrowed, mc_arrivals, seed)?;
            let tol = b.iter().chain(&a).map(|e| e.half_width).fold(0.0, f64::max) * 3.0;
            (b.iter().map(|e| e.estimate).collect(), a.iter().map(|e| e.estimate).collect(), tol, false)
        }
        (Err(e), _) | (_, Err(e)) => return Err(e),
    };
    let holds = before.iter().zip(&after).all(|(b, a)| *a <= b + tolerance);
    let own_holds = after[s] <= before[s] + tolerance;
    Ok(ScalingCheck { slice: s, q, before, after, exact, tolerance, own_holds, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single(omega: f64, w: f64, rho: f64) -> BlockingScenario {
        BlockingScenario {
            reserved_bandwidth_hz: w,
            slices: vec![BlockingSlice { bandwidths_hz: vec![omega], duration_s: 1.0, arrival_rates: vec![rho], deadline_s: None }],
        }
    }

    #[test]
    fn two_state_system_is_half_busy() {
        let sc = single(1.0, 1.0, 1.0);
        assert_relative_eq!(steady_state_prob(&[1], &sc).unwrap(), 0.5, epsilon = 1e-15);
        assert_relative_eq!(steady_state_prob(&[0], &sc).unwrap(), 0.5, epsilon = 1e-15);
        assert!(steady_state_prob(&[2], &sc).is_err());
    }

    #[test]
    fn single_class_is_erlang_b() {
        let sc = single(1.0, 2.0, 0.5);
        assert_relative_eq!(blocking_prob_exact(&sc, 0).unwrap(), 0.076923076923, epsilon = 1e-11);
        assert_relative_eq!(erlang_b(0.5, 2), 1.0 / 13.0, epsilon = 1e-15);
    }

    #[test]
    fn starved_band_blocks_everything() {
        let sc = single(2.0, 1.0, 0.3);
        assert_eq!(blocking_prob_exact(&sc, 0).unwrap(), 1.0);
        let mc = blocking_prob_mc(&sc, 0, 10_000, 1).unwrap();
        assert_eq!(mc.estimate, 1.0);
    }

    #[test]
    fn narrowing_by_one_is_identity() {
        let sc = single(1.0, 3.0, 0.4);
        let c = scaling_check(&sc, 0, 1, 10_000, 0).unwrap();
        assert_eq!(c.before, c.after);
        assert!(c.holds);
    }

    #[test]
    fn oversized_state_space_is_reported() {
        let sc = BlockingScenario {
            reserved_bandwidth_hz: 1e4,
            slices: (0..4)
                .map(|s| BlockingSlice {
                    bandwidths_hz: vec![1.0 + s as f64 * 0.1],
                    duration_s: 1.0,
                    arrival_rates: vec![0.5],
                    deadline_s: None,
                })
                .collect(),
        };
        assert!(matches!(blocking_all_exact(&sc), Err(Error::StateSpaceTooLarge { .. })));
    }
}
