//! Closed-form physical-layer math: Shannon and finite-blocklength rates,
//! URLLC bandwidth reservation and the per-minislot slice utilities.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{config, domain, Result};

/// Minimum received SNR (linear) enforced on URLLC UEs in Case I.
pub const MIN_URLLC_SNR: f64 = 5.0;

const LN_2: f64 = std::f64::consts::LN_2;

/// Standard normal tail probability Q(x).
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse of the standard normal tail, `Q(x) = p`.
///
/// Newton iterations on `ln Q(x) = ln p`, kept inside a shrinking bisection
/// bracket so that the iteration cannot leave the monotone branch.
pub fn q_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(domain(format!("Q⁻¹ needs 0 < p < 1, got {p}")));
    }
    if p > 0.5 {
        return Ok(-q_inverse(1.0 - p)?);
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    let target = p.ln();
    // Abramowitz & Stegun 26.2.23 as the starting point (error < 4.5e-4).
    let t = (-2.0 * target).sqrt();
    let mut x = t - (2.515517 + 0.802853 * t + 0.010328 * t * t)
        / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t);
    let (mut lo, mut hi) = (0.0_f64, 38.0_f64);
    x = x.clamp(lo, hi);
    for _ in 0..200 {
        let q = q_function(x);
        let h = q.ln() - target;
        if h > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let mut next = x + h * q / normal_pdf(x);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * x.max(1.0) || hi - lo <= 1e-15 {
            return Ok(next);
        }
        x = next;
    }
    Ok(x)
}

/// Shannon capacity per Hz, `log2(1 + snr)`.
pub fn capacity(snr: f64) -> f64 {
    snr.ln_1p() / LN_2
}

/// Channel dispersion `ln²2·(1 − 1/(1+snr)²)`.
pub fn dispersion(snr: f64) -> f64 {
    LN_2 * LN_2 * (1.0 - 1.0 / ((1.0 + snr) * (1.0 + snr)))
}

/// Channel uses needed for `bits` at capacity `c` with dispersion penalty
/// `q = Q⁻¹(α)`: the positive root of `r·c − q·√r = bits`.
pub fn channel_uses_at_capacity(bits: f64, c: f64, q: f64) -> f64 {
    let sqrt_r = (q + (q * q + 4.0 * bits * c).sqrt()) / (2.0 * c);
    sqrt_r * sqrt_r
}

/// Capacity needed to deliver `bits` within `r` channel uses; the inverse of
/// [`channel_uses_at_capacity`] in its second argument.
pub fn capacity_for_channel_uses(bits: f64, r: f64, q: f64) -> f64 {
    (bits + q * r.sqrt()) / r
}

/// Finite-blocklength channel uses for an `bits`-bit packet at the given
/// SNR and decoding error probability α.
pub fn channel_uses(bits: f64, snr: f64, alpha: f64) -> Result<f64> {
    if !(bits > 0.0) {
        return Err(domain(format!("packet length must be positive, got {bits}")));
    }
    let c = capacity(snr);
    if !(c > 0.0) {
        return Err(domain(format!("channel uses are singular at snr = {snr}")));
    }
    Ok(channel_uses_at_capacity(bits, c, q_inverse(alpha)?))
}

/// Bits carried by `r` channel uses under the simplified normal
/// approximation `r·C − Q⁻¹(α)·√r`.
pub fn bits_delivered(r: f64, snr: f64, alpha: f64) -> Result<f64> {
    Ok(r * capacity(snr) - q_inverse(alpha)? * r.sqrt())
}

/// Bits carried by `r` channel uses with the full dispersion term
/// `r·C − Q⁻¹(α)·√(r·V)`.
pub fn bits_delivered_exact(r: f64, snr: f64, alpha: f64) -> Result<f64> {
    Ok(r * capacity(snr) - q_inverse(alpha)? * (r * dispersion(snr)).sqrt())
}

/// Bandwidth of one URLLC subslice, `ω = λ·r/(κ·D)`.
pub fn subslice_bandwidth(arrival_rate: f64, r: f64, kappa: f64, deadline: f64) -> f64 {
    arrival_rate * r / (kappa * deadline)
}

/// How URLLC bandwidth is reserved for the active subslices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reservation {
    /// Square-root staffing: mean plus `Q⁻¹(β)` standard deviations.
    Staffed,
    /// Mean load only (β ignored).
    MeanOnly,
    /// Every UE keeps its full transmission bandwidth `r/(κ·D)` reserved,
    /// as if it were transmitting all the time.
    Dedicated,
}

/// Coefficients of `W^u(f) = Σ a_i·f_i + q·√(Σ c_i·f_i²)` for one URLLC UE
/// with channel uses `f_i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReservationTerm {
    pub mean: f64,
    pub var: f64,
}

pub fn reservation_term(model: Reservation, arrival_rate: f64, kappa: f64, deadline: f64) -> ReservationTerm {
    match model {
        Reservation::Staffed | Reservation::MeanOnly => ReservationTerm {
            mean: arrival_rate / kappa,
            var: arrival_rate / (kappa * kappa * deadline),
        },
        Reservation::Dedicated => ReservationTerm { mean: 1.0 / (kappa * deadline), var: 0.0 },
    }
}

/// Multiplier of the standard-deviation term for a reservation model.
pub fn reservation_margin(model: Reservation, blocking_target: f64) -> Result<f64> {
    match model {
        Reservation::Staffed => q_inverse(blocking_target),
        Reservation::MeanOnly | Reservation::Dedicated => Ok(0.0),
    }
}

/// Reserved URLLC bandwidth for per-UE channel uses `r`, counting only UEs
/// whose mask bit is set.
pub fn reserved_bandwidth(terms: &[ReservationTerm], margin: f64, mask: &[bool], r: &[f64]) -> f64 {
    let mut mean = 0.0;
    let mut var = 0.0;
    for ((t, &on), &ri) in terms.iter().zip(mask).zip(r) {
        if on {
            mean += t.mean * ri;
            var += t.var * ri * ri;
        }
    }
    if margin == 0.0 { mean } else { mean + margin * var.sqrt() }
}

/// Square-root staffing bandwidth `ς_mean + Q⁻¹(β)·√ς_var`.
pub fn staffed_bandwidth(
    mask: &[bool],
    arrival_rate: &[f64],
    r: &[f64],
    kappa: f64,
    deadline: &[f64],
    blocking_target: f64,
) -> Result<f64> {
    if mask.len() != arrival_rate.len() || mask.len() != r.len() || mask.len() != deadline.len() {
        return Err(domain("mask, arrival rates, channel uses and deadlines differ in length"));
    }
    let terms: Vec<_> = arrival_rate
        .iter()
        .zip(deadline)
        .map(|(&l, &d)| reservation_term(Reservation::Staffed, l, kappa, d))
        .collect();
    Ok(reserved_bandwidth(&terms, q_inverse(blocking_target)?, mask, r))
}

/// Shannon rate of a multicast group member, `ω·log2(1+snr)`.
pub fn embb_rate(bandwidth: f64, snr: f64) -> f64 {
    bandwidth * capacity(snr)
}

/// Per-UE deadline profit `ã/(1 − e^{−D})`.
pub fn deadline_profit(a_tilde: f64, deadline: f64) -> f64 {
    a_tilde / -(-deadline).exp_m1()
}

/// eMBB slice utility for one minislot: `Σ_i b·ln(1+SNR_i) + η·Σ_j (E_j − b·p_j)`
/// where `p_j` is the slice's transmit power at BS j.
pub fn embb_utility_minislot(accepted: bool, snrs: &[f64], bs_powers: &[f64], eta: f64, budgets: &[f64]) -> f64 {
    let b = if accepted { 1.0 } else { 0.0 };
    let profit: f64 = snrs.iter().map(|s| s.ln_1p()).sum();
    let balance: f64 = budgets.iter().zip(bs_powers).map(|(e, p)| e - b * p).sum();
    b * profit + eta * balance
}

/// URLLC slice utility for one minislot. `ue_bs_powers[i][j]` is UE i's
/// transmit power at BS j.
pub fn urllc_utility_minislot(
    mask: &[bool],
    snrs: &[f64],
    deadline: f64,
    a_tilde: f64,
    ue_bs_powers: &[Vec<f64>],
    eta: f64,
    budgets: &[f64],
) -> f64 {
    let bonus = deadline_profit(a_tilde, deadline);
    let mut total = 0.0;
    let mut used = vec![0.0; budgets.len()];
    for (i, &on) in mask.iter().enumerate() {
        if on {
            total += snrs[i].ln_1p() + bonus;
            for (u, p) in used.iter_mut().zip(&ue_bs_powers[i]) {
                *u += p;
            }
        }
    }
    total + eta * budgets.iter().zip(&used).map(|(e, u)| e - u).sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbbSliceRequest {
    pub num_ues: usize,
    /// Minimum multicast rate R_s in bit/s.
    pub min_rate_bps: f64,
}

impl EmbbSliceRequest {
    pub fn validate(&self) -> Result<()> {
        if self.num_ues == 0 {
            return Err(config("an eMBB slice needs at least one UE"));
        }
        if !(self.min_rate_bps > 0.0) {
            return Err(config("eMBB minimum rate must be positive"));
        }
        Ok(())
    }
}

fn default_decode_error() -> f64 {
    2e-8
}
fn default_blocking_target() -> f64 {
    1e-6
}
fn default_arrival_rate() -> f64 {
    0.1
}
fn default_packet_bits() -> f64 {
    160.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrllcSliceRequest {
    pub num_ues: usize,
    /// Transmission deadline D_s in seconds.
    pub deadline_s: f64,
    /// Codeword decoding error probability α.
    #[serde(default = "default_decode_error")]
    pub decode_error: f64,
    /// Target blocking probability β.
    #[serde(default = "default_blocking_target")]
    pub blocking_target: f64,
    /// Per-UE packet arrival rate λ, packets per second.
    #[serde(default = "default_arrival_rate")]
    pub arrival_rate: f64,
    /// Packet length L^u in bits.
    #[serde(default = "default_packet_bits")]
    pub packet_bits: f64,
}

impl UrllcSliceRequest {
    /// Per-UE load ρ_s = λ·D_s; the holding time equals the deadline.
    pub fn load(&self) -> f64 {
        self.arrival_rate * self.deadline_s
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_ues == 0 {
            return Err(config("a URLLC slice needs at least one UE"));
        }
        if !(self.deadline_s > 0.0) {
            return Err(config("URLLC deadline must be positive"));
        }
        for (name, p) in [("decode_error", self.decode_error), ("blocking_target", self.blocking_target)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.arrival_rate > 0.0) || !(self.packet_bits > 0.0) {
            return Err(config("arrival rate and packet length must be positive"));
        }
        if self.load() >= 1.0 {
            log::warn!("URLLC load λ·D = {} is not below 1", self.load());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    /// System bandwidth W in Hz.
    pub total_bandwidth_hz: f64,
    /// Power budget E_j of every BS, watts.
    pub bs_power_budget_w: f64,
    /// κ, channel uses per second per Hz.
    pub numerology_constant: f64,
    /// η, weight of the power balance in both utilities.
    pub efficiency_coeff: f64,
    /// ρ̂, weight of URLLC utility in the objective.
    pub priority_weight: f64,
    /// ã, URLLC deadline profit constant.
    pub urllc_profit_const: f64,
    /// ε, tolerated QoS outage probability.
    pub outage_prob: f64,
    /// θ, confidence parameter of the sample size bound.
    pub sample_confidence: f64,
    pub minislots_per_slot: usize,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            total_bandwidth_hz: 10e6,
            bs_power_budget_w: 1.0,
            numerology_constant: 0.032,
            efficiency_coeff: 100.0,
            priority_weight: 1.0,
            urllc_profit_const: 0.1,
            outage_prob: 0.5,
            sample_confidence: 0.5,
            minislots_per_slot: 60,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.total_bandwidth_hz > 0.0) || !(self.bs_power_budget_w > 0.0) || !(self.numerology_constant > 0.0) {
            return Err(config("bandwidth, power budget and κ must be positive"));
        }
        if !(self.efficiency_coeff >= 0.0) || !(self.priority_weight >= 0.0) || !(self.urllc_profit_const >= 0.0) {
            return Err(config("η, ρ̂ and ã must be non-negative"));
        }
        for (name, p) in [("outage_prob", self.outage_prob), ("sample_confidence", self.sample_confidence)] {
            if !(p > 0.0 && p < 1.0) {
                return Err(config(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.minislots_per_slot == 0 {
            return Err(config("a slot needs at least one minislot"));
        }
        Ok(())
    }
}

/// The default eMBB requests: `(UEs, Mb/s)` = (4, 6), (6, 4), (8, 2).
pub fn default_embb_requests() -> Vec<EmbbSliceRequest> {
    [(4, 6e6), (6, 4e6), (8, 2e6)]
        .into_iter()
        .map(|(n, r)| EmbbSliceRequest { num_ues: n, min_rate_bps: r })
        .collect()
}

/// The default URLLC requests: 3 UEs with a 1 ms deadline and 5 UEs with 2 ms.
pub fn default_urllc_requests() -> Vec<UrllcSliceRequest> {
    [(3, 1e-3), (5, 2e-3)]
        .into_iter()
        .map(|(n, d)| UrllcSliceRequest {
            num_ues: n,
            deadline_s: d,
            decode_error: default_decode_error(),
            blocking_target: default_blocking_target(),
            arrival_rate: default_arrival_rate(),
            packet_bits: default_packet_bits(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn q_inverse_rejects_boundaries() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(q_inverse(p).is_err());
        }
        assert_eq!(q_inverse(0.5).unwrap(), 0.0);
    }

    #[test]
    fn q_inverse_is_odd_around_one_half() {
        for p in [0.01, 0.2, 0.4] {
            assert_relative_eq!(q_inverse(p).unwrap(), -q_inverse(1.0 - p).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn capacity_and_dispersion_at_zero() {
        assert_eq!(capacity(0.0), 0.0);
        assert_eq!(dispersion(0.0), 0.0);
        assert_relative_eq!(capacity(3.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn channel_uses_without_dispersion_penalty() {
        let r = channel_uses(160.0, 31.0, 0.5).unwrap();
        assert_relative_eq!(r, 32.0, epsilon = 1e-12);
        assert!(channel_uses(160.0, 0.0, 1e-5).is_err());
    }

    #[test]
    fn subslice_bandwidth_arithmetic() {
        assert_relative_eq!(subslice_bandwidth(0.1, 32.0, 0.032, 1.0), 100.0, epsilon = 1e-12);
        assert_relative_eq!(subslice_bandwidth(0.1, 100.0, 0.032, 1.0), 312.5, epsilon = 1e-12);
        assert_relative_eq!(subslice_bandwidth(0.1, 100.0, 0.032, 2.0), 156.25, epsilon = 1e-12);
    }

    #[test]
    fn staffing_degenerate_cases() {
        let w = staffed_bandwidth(&[false, false], &[0.1, 0.1], &[50.0, 60.0], 0.032, &[1.0, 1.0], 1e-6).unwrap();
        assert_eq!(w, 0.0);
        let w = staffed_bandwidth(&[true], &[0.1], &[100.0], 0.032, &[1.0], 0.5).unwrap();
        assert_relative_eq!(w, 312.5, epsilon = 1e-12);
    }

    #[test]
    fn embb_rate_examples() {
        assert_relative_eq!(embb_rate(1e6, 3.0), 2e6, epsilon = 1e-9);
        assert_eq!(embb_rate(0.0, 7.0), 0.0);
        assert_relative_eq!(embb_rate(10e6, 1.0), 1e7, epsilon = 1e-9);
    }

    #[test]
    fn utility_limits() {
        let e = [1.0, 1.0, 1.0];
        assert_relative_eq!(embb_utility_minislot(false, &[10.0], &[0.3, 0.2, 0.1], 100.0, &e), 300.0);
        let u = embb_utility_minislot(true, &[std::f64::consts::E - 1.0], &[0.0; 3], 100.0, &e);
        assert_relative_eq!(u, 301.0, epsilon = 1e-12);
        let u = embb_utility_minislot(true, &[3.0], &e, 100.0, &e);
        assert_relative_eq!(u, 4f64.ln(), epsilon = 1e-12);
        let u = urllc_utility_minislot(&[false, false], &[1.0, 2.0], 1e-3, 0.1, &[vec![0.1; 3], vec![0.1; 3]], 100.0, &e);
        assert_relative_eq!(u, 300.0);
        let u = urllc_utility_minislot(&[true], &[0.0], 60.0, 0.1, &[vec![0.0; 3]], 100.0, &e);
        assert_relative_eq!(u, 300.1, epsilon = 1e-12);
    }

    #[test]
    fn deadline_profit_decreases() {
        let a = deadline_profit(0.1, 1e-3);
        let b = deadline_profit(0.1, 2e-3);
        assert!(a > b);
        assert_relative_eq!(a, 0.1 / (1.0 - (-1e-3f64).exp()), max_relative = 1e-12);
    }
}
