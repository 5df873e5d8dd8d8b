//! The convex bandwidth-and-beamforming subproblem for fixed acceptance bits.
//!
//! Rank-one beamformers `v·vᴴ` are relaxed to Hermitian PSD matrices. With
//! the acceptance bits fixed the problem is a small conic program, solved by
//! a log-barrier interior-point method ([`solve`]). Feasibility of fixed slot
//! variables is decided by the same method's phase-one problem
//! ([`check_feasibility`]).
//!
//! Two constraints are used in an equivalent concave form:
//!
//! * the multicast QoS constraint `ω·log2(1+SNR) ≥ R` is written
//!   `log2(1+SNR) − R/ω ≥ 0`. The product form is not jointly concave in
//!   `(ω, V)` (its Hessian is indefinite), but it has the same feasible set
//!   for `ω > 0`;
//! * the channel-use slack `f ≥ r(C(SNR))` is written
//!   `log2(1+SNR) − (L + Q⁻¹(α)·√f)/f ≥ 0`, using that `r(·)` is decreasing
//!   and `C ↦ (L + Q⁻¹√f)/f` is its inverse.

mod barrier;
mod extract;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{self, serde_complex, CMatrix, CVector};
use crate::phy::{self, Reservation};

pub use extract::{extract_beamformer, BeamformerCandidateScore, Extraction, ExtractionPath, PowerScaledScore};

/// Relative threshold on `λ₂/λ₁` below which a PSD solution counts as rank one.
pub const TIGHTNESS_THRESHOLD: f64 = 1e-6;
/// Smallest eigenvalue still accepted as positive semidefinite.
pub const PSD_FLOOR: f64 = -1e-8;
/// Phase-one violation below which a problem counts as feasible.
pub const FEASIBILITY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnrCase {
    /// URLLC UEs must reach the minimum SNR.
    #[default]
    #[serde(rename = "I")]
    Enforced,
    /// The minimum-SNR constraint is dropped.
    #[serde(rename = "II")]
    Relaxed,
}

/// One eMBB slice; a multicast covariance `V_s` is optimized iff `accepted`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbbBlock {
    pub accepted: bool,
    pub min_rate_bps: f64,
    #[serde(with = "serde_complex::vectors")]
    pub channels: Vec<CVector>,
    /// Fixed slice bandwidth in Hz; `None` lets the solver choose it.
    #[serde(default)]
    pub fixed_bandwidth_hz: Option<f64>,
}

/// One URLLC UE (subslice); `G` is optimized iff `active`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UrllcUe {
    pub slice: usize,
    pub active: bool,
    #[serde(with = "serde_complex::vector")]
    pub channel: CVector,
    pub packet_bits: f64,
    pub decode_error: f64,
    pub deadline_s: f64,
    pub arrival_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexSubproblem {
    pub num_bs: usize,
    pub antennas_per_bs: usize,
    /// φ·σ² in watts.
    pub noise_floor_w: f64,
    pub bs_power_budget_w: Vec<f64>,
    pub total_bandwidth_hz: f64,
    pub numerology_constant: f64,
    pub efficiency_coeff: f64,
    pub priority_weight: f64,
    pub urllc_profit_const: f64,
    pub reservation: Reservation,
    pub blocking_target: f64,
    pub snr_case: SnrCase,
    pub embb: Vec<EmbbBlock>,
    pub urllc: Vec<UrllcUe>,
    /// Number of URLLC slices, including slices with no active UE.
    pub num_urllc_slices: usize,
}

impl ConvexSubproblem {
    pub fn dim(&self) -> usize {
        self.num_bs * self.antennas_per_bs
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 {
            return Err(domain("subproblem needs at least one antenna"));
        }
        if self.bs_power_budget_w.len() != self.num_bs || self.bs_power_budget_w.iter().any(|&e| !(e > 0.0)) {
            return Err(domain("need one positive power budget per BS"));
        }
        if !(self.noise_floor_w > 0.0) || !(self.total_bandwidth_hz > 0.0) || !(self.numerology_constant > 0.0) {
            return Err(domain("noise floor, bandwidth and κ must be positive"));
        }
        if !(self.efficiency_coeff >= 0.0) || !(self.priority_weight >= 0.0) {
            return Err(domain("η and ρ̂ must be non-negative"));
        }
        for (s, b) in self.embb.iter().enumerate() {
            if b.channels.is_empty() || b.channels.iter().any(|h| h.len() != n) {
                return Err(domain(format!("eMBB slice {s} needs channels of length {n}")));
            }
            if !(b.min_rate_bps > 0.0) {
                return Err(domain(format!("eMBB slice {s} needs a positive rate")));
            }
            if let Some(w) = b.fixed_bandwidth_hz {
                if !(w >= 0.0) {
                    return Err(domain(format!("eMBB slice {s} has negative bandwidth")));
                }
            }
        }
        for (i, u) in self.urllc.iter().enumerate() {
            if u.channel.len() != n {
                return Err(domain(format!("URLLC UE {i} needs a channel of length {n}")));
            }
            if u.slice >= self.num_urllc_slices {
                return Err(domain(format!("URLLC UE {i} refers to slice {} of {}", u.slice, self.num_urllc_slices)));
            }
            if !(u.packet_bits > 0.0 && u.deadline_s > 0.0 && u.arrival_rate > 0.0) {
                return Err(domain(format!("URLLC UE {i} needs positive L, D and λ")));
            }
            if !(u.decode_error > 0.0 && u.decode_error < 1.0) {
                return Err(domain(format!("URLLC UE {i} needs α in (0, 1)")));
            }
        }
        if self.reservation == Reservation::Staffed && !(self.blocking_target > 0.0 && self.blocking_target < 1.0) {
            return Err(domain("β must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Objective terms that do not depend on any variable: the power budget
    /// credit of every slice plus the deadline profit of active URLLC UEs.
    pub fn constant_utility(&self) -> f64 {
        let budget: f64 = self.bs_power_budget_w.iter().sum();
        let eta = self.efficiency_coeff;
        let embb = self.embb.len() as f64 * eta * budget;
        let urllc_profit: f64 = self
            .urllc
            .iter()
            .filter(|u| u.active)
            .map(|u| phy::deadline_profit(self.urllc_profit_const, u.deadline_s))
            .sum();
        embb + self.priority_weight * (self.num_urllc_slices as f64 * eta * budget + urllc_profit)
    }

    /// Full objective at given covariances, `ρ̂`-weighted. Matrices of
    /// declined slices and inactive UEs are ignored.
    pub fn utility(&self, v: &[CMatrix], g: &[CMatrix]) -> f64 {
        let floor = self.noise_floor_w;
        let eta = self.efficiency_coeff;
        let mut total = self.constant_utility();
        for (b, m) in self.embb.iter().zip(v) {
            if b.accepted {
                let profit: f64 = b.channels.iter().map(|h| (linalg::quad_form(m, h) / floor).ln_1p()).sum();
                total += profit - eta * linalg::trace_re(m);
            }
        }
        for (u, m) in self.urllc.iter().zip(g) {
            if u.active {
                let snr = linalg::quad_form(m, &u.channel) / floor;
                total += self.priority_weight * (snr.ln_1p() - eta * linalg::trace_re(m));
            }
        }
        total
    }

    pub(crate) fn reservation_terms(&self) -> Vec<phy::ReservationTerm> {
        self.urllc
            .iter()
            .map(|u| phy::reservation_term(self.reservation, u.arrival_rate, self.numerology_constant, u.deadline_s))
            .collect()
    }

    pub(crate) fn reservation_margin(&self) -> Result<f64> {
        phy::reservation_margin(self.reservation, self.blocking_target)
    }

    /// Power transmitted by BS `j` under covariance `m`: `tr(Z_j·M)`.
    pub fn bs_power(&self, m: &CMatrix, j: usize) -> f64 {
        let k = self.antennas_per_bs;
        (j * k..(j + 1) * k).map(|a| m[(a, a)].re).sum()
    }
}

/// A solved covariance with its spectral diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamformMatrix {
    #[serde(with = "serde_complex::matrix")]
    pub matrix: CMatrix,
    /// `λ₂/λ₁`; zero for the zero matrix.
    pub tightness_ratio: f64,
    pub min_eigenvalue: f64,
}

impl BeamformMatrix {
    pub fn new(matrix: CMatrix) -> Self {
        let vals = linalg::eigenvalues(&matrix);
        let n = vals.len();
        let l1 = vals[n - 1];
        let l2 = if n > 1 { vals[n - 2] } else { 0.0 };
        let tightness_ratio = if l1 > 0.0 { (l2 / l1).max(0.0) } else { 0.0 };
        Self { matrix, tightness_ratio, min_eigenvalue: vals[0] }
    }

    pub fn zeros(n: usize) -> Self {
        Self { matrix: CMatrix::zeros(n, n), tightness_ratio: 0.0, min_eigenvalue: 0.0 }
    }

    pub fn is_tight(&self) -> bool {
        self.tightness_ratio <= TIGHTNESS_THRESHOLD
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub objective: f64,
    /// Bandwidth per eMBB slice in Hz; zero for declined slices.
    pub embb_bandwidth_hz: Vec<f64>,
    pub v: Vec<BeamformMatrix>,
    pub g: Vec<BeamformMatrix>,
    /// Channel uses `f` per URLLC UE at the active slack; zero when inactive.
    pub channel_uses: Vec<f64>,
    /// Reserved URLLC bandwidth in Hz at the returned channel uses.
    pub urllc_bandwidth_hz: f64,
    pub newton_steps: usize,
    /// Bound on the suboptimality of `objective`, `ν/t`.
    pub duality_gap: f64,
}

impl SolveResult {
    pub fn max_tightness_ratio(&self) -> f64 {
        self.v.iter().chain(&self.g).map(|m| m.tightness_ratio).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Target for the relative duality gap.
    pub tolerance: f64,
    /// Cap on the total number of Newton steps (both phases).
    pub max_newton_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tolerance: 1e-9, max_newton_steps: 500 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Estimated optimal phase-one violation (normalized units).
    pub violation: f64,
    pub reason: Option<String>,
}

/// Maximizes the subproblem objective. Infeasible problems yield
/// [`Error::Infeasible`] with the phase-one violation in the message.
pub fn solve(problem: &ConvexSubproblem, options: &SolverOptions) -> Result<SolveResult> {
    problem.validate()?;
    barrier::solve(problem, options)
}

/// Decides whether the fixed acceptance bits and bandwidths admit any
/// feasible covariances. Solver failures count as infeasible.
pub fn check_feasibility(problem: &ConvexSubproblem, options: &SolverOptions) -> FeasibilityReport {
    if let Err(e) = problem.validate() {
        return FeasibilityReport { feasible: false, violation: f64::INFINITY, reason: Some(e.to_string()) };
    }
    match barrier::feasibility(problem, options) {
        Ok(r) => r,
        Err(e) => {
            log::debug!("feasibility check failed: {e}");
            FeasibilityReport { feasible: false, violation: f64::INFINITY, reason: Some(e.to_string()) }
        }
    }
}

pub(crate) fn infeasible(violation: f64) -> Error {
    Error::Infeasible(format!("phase-one violation {violation:.3e} exceeds {FEASIBILITY_TOLERANCE:e}"))
}
