//! Sample-level alternation, slot restoration and the minislot scheduler.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{embb_acceptance, es_mask, grm_mask, restore_slot_vars, AcceptancePolicy, Algorithm, Mode};
use crate::channel::{sample_channels, ChannelStream, SliceKind, SliceLayout, Topology, TopologyParams};
use crate::error::{config, Error, Result};
use crate::linalg::{outer, quad_form, serde_complex, trace_re, CMatrix, CVector, C64};
use crate::phy::{self, EmbbSliceRequest, SystemParams, UrllcSliceRequest};
use crate::rng::{substream, Domain};
use crate::solver::{
    self, check_feasibility, extract_beamformer, BeamformerCandidateScore, ConvexSubproblem, EmbbBlock, ExtractionPath,
    SnrCase, SolveResult, SolverOptions, UrllcUe,
};

/// Relative slack on the direct constraint checks used for eMBB acceptance.
const CHECK_SLACK: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlicingConfig {
    pub algorithm: Algorithm,
    pub snr_case: SnrCase,
    pub acceptance: AcceptancePolicy,
    pub solver: SolverOptions,
    /// Channel samples `M` used for the slot decision.
    pub samples: usize,
    pub minislots: usize,
    pub max_alternations: usize,
    pub convergence_tol: f64,
    /// Fraction of samples that must solve for the slot decision to proceed.
    pub quorum: f64,
    pub randomization_candidates: usize,
}

impl SlicingConfig {
    pub fn new(algorithm: Algorithm, samples: usize, minislots: usize) -> Self {
        Self {
            algorithm,
            snr_case: SnrCase::Enforced,
            acceptance: AcceptancePolicy::Utility,
            solver: SolverOptions::default(),
            samples,
            minislots,
            max_alternations: 250,
            convergence_tol: 1e-5,
            quorum: 0.8,
            randomization_candidates: 50,
        }
    }
}

#[derive(Clone, Debug)]
struct UrllcMember {
    slice: usize,
    topo: usize,
}

/// A generated topology together with the slice requests it serves.
#[derive(Clone, Debug)]
pub struct Instance {
    pub topology: Topology,
    pub system: SystemParams,
    pub mode: Mode,
    /// Rate requirement per served eMBB slice.
    pub embb_rates: Vec<f64>,
    /// Requested slice each served eMBB slice came from; differs from the
    /// identity only in unicast mode.
    pub embb_origin: Vec<usize>,
    embb_groups: Vec<Vec<usize>>,
    pub urllc: Vec<UrllcSliceRequest>,
    members: Vec<UrllcMember>,
}

impl Instance {
    /// Places the requested UEs. In unicast mode UE positions are the same
    /// as in multicast mode; only the grouping differs.
    pub fn new(
        params: &TopologyParams,
        system: &SystemParams,
        embb: &[EmbbSliceRequest],
        urllc: &[UrllcSliceRequest],
        mode: Mode,
        seed: u64,
    ) -> Result<Self> {
        system.validate()?;
        for r in embb {
            r.validate()?;
        }
        for r in urllc {
            r.validate()?;
        }
        let layout = SliceLayout { embb: embb.iter().map(|r| r.num_ues).collect(), urllc: urllc.iter().map(|r| r.num_ues).collect() };
        let topology = Topology::generate(params, &layout, seed)?;
        let mut embb_groups = Vec::new();
        let mut embb_rates = Vec::new();
        let mut embb_origin = Vec::new();
        let mut members = Vec::new();
        for (s, r) in embb.iter().enumerate() {
            let idx: Vec<usize> =
                (0..topology.ues.len()).filter(|&u| topology.ues[u].key.kind == SliceKind::Embb && topology.ues[u].key.slice == s).collect();
            match mode {
                Mode::Multicast => {
                    embb_groups.push(idx);
                    embb_rates.push(r.min_rate_bps);
                    embb_origin.push(s);
                }
                Mode::Unicast => {
                    for u in idx {
                        embb_groups.push(vec![u]);
                        embb_rates.push(r.min_rate_bps);
                        embb_origin.push(s);
                    }
                }
            }
        }
        if embb_groups.len() > 20 {
            return Err(config("at most 20 eMBB slices can be served"));
        }
        for (u, site) in topology.ues.iter().enumerate() {
            if site.key.kind == SliceKind::Urllc {
                members.push(UrllcMember { slice: site.key.slice, topo: u });
            }
        }
        Ok(Self { topology, system: system.clone(), mode, embb_rates, embb_origin, embb_groups, urllc: urllc.to_vec(), members })
    }

    pub fn num_embb(&self) -> usize {
        self.embb_groups.len()
    }

    pub fn num_urllc_ues(&self) -> usize {
        self.members.len()
    }

    pub fn urllc_slice_of(&self, ue: usize) -> usize {
        self.members[ue].slice
    }

    pub fn embb_group_size(&self, s: usize) -> usize {
        self.embb_groups[s].len()
    }

    pub fn num_embb_ues(&self) -> usize {
        self.embb_groups.iter().map(Vec::len).sum()
    }

    fn floor(&self) -> f64 {
        self.topology.params.noise_floor()
    }

    fn num_bs(&self) -> usize {
        self.topology.params.num_bs
    }

    fn dim(&self) -> usize {
        self.topology.dim()
    }

    fn blocking_target(&self) -> f64 {
        self.urllc.iter().map(|r| r.blocking_target).fold(f64::INFINITY, f64::min).min(0.5)
    }

    fn embb_channels(&self, h: &[CVector], s: usize) -> Vec<CVector> {
        self.embb_groups[s].iter().map(|&u| h[u].clone()).collect()
    }

    fn subproblem(
        &self,
        cfg: &SlicingConfig,
        h: &[CVector],
        embb: &[bool],
        omega: Option<&[f64]>,
        active: &[bool],
    ) -> ConvexSubproblem {
        let sys = &self.system;
        ConvexSubproblem {
            num_bs: self.num_bs(),
            antennas_per_bs: self.topology.params.antennas_per_bs,
            noise_floor_w: self.floor(),
            bs_power_budget_w: vec![sys.bs_power_budget_w; self.num_bs()],
            total_bandwidth_hz: sys.total_bandwidth_hz,
            numerology_constant: sys.numerology_constant,
            efficiency_coeff: sys.efficiency_coeff,
            priority_weight: sys.priority_weight,
            urllc_profit_const: sys.urllc_profit_const,
            reservation: cfg.algorithm.reservation(),
            blocking_target: self.blocking_target(),
            snr_case: cfg.snr_case,
            embb: (0..self.num_embb())
                .map(|s| EmbbBlock {
                    accepted: embb[s],
                    min_rate_bps: self.embb_rates[s],
                    channels: self.embb_channels(h, s),
                    fixed_bandwidth_hz: omega.map(|w| w[s]),
                })
                .collect(),
            urllc: self
                .members
                .iter()
                .zip(active)
                .map(|(m, &on)| {
                    let r = &self.urllc[m.slice];
                    UrllcUe {
                        slice: m.slice,
                        active: on,
                        channel: h[m.topo].clone(),
                        packet_bits: r.packet_bits,
                        decode_error: r.decode_error,
                        deadline_s: r.deadline_s,
                        arrival_rate: r.arrival_rate,
                    }
                })
                .collect(),
            num_urllc_slices: self.urllc.len(),
        }
    }

    fn bs_powers(&self, m: &CMatrix) -> Vec<f64> {
        let k = self.topology.params.antennas_per_bs;
        (0..self.num_bs()).map(|j| (j * k..(j + 1) * k).map(|a| m[(a, a)].re).sum()).collect()
    }

    fn urllc_profit(&self, ue: usize) -> f64 {
        phy::deadline_profit(self.system.urllc_profit_const, self.urllc[self.members[ue].slice].deadline_s)
    }

    /// Starting covariance of eMBB slice `s`: its standalone optimum with an
    /// equal share of bandwidth and power, or zero if that is infeasible.
    fn embb_shadow(&self, cfg: &SlicingConfig, h: &[CVector], s: usize) -> CMatrix {
        let n = self.num_embb();
        let mut embb = vec![false; n];
        embb[s] = true;
        let omega = vec![self.system.total_bandwidth_hz / n as f64; n];
        let mut p = self.subproblem(cfg, h, &embb, Some(&omega), &vec![false; self.num_urllc_ues()]);
        for e in &mut p.bs_power_budget_w {
            *e /= (n + 1) as f64;
        }
        match solver::solve(&p, &cfg.solver) {
            Ok(r) => r.v[s].matrix.clone(),
            Err(Error::MaxIterations { best, .. }) => best.v[s].matrix.clone(),
            Err(_) => CMatrix::zeros(self.dim(), self.dim()),
        }
    }

    /// Starting covariance of URLLC UE `i`: a matched-filter beam with the
    /// power that maximizes `ln(1+SNR) − η·p`, kept within the minimum SNR
    /// and every BS budget.
    fn urllc_shadow(&self, cfg: &SlicingConfig, h: &CVector) -> CMatrix {
        let norm2 = h.norm_squared();
        if norm2 == 0.0 {
            return CMatrix::zeros(self.dim(), self.dim());
        }
        let g = norm2 / self.floor();
        let dir = h / C64::new(norm2.sqrt(), 0.0);
        let k = self.topology.params.antennas_per_bs;
        let cap = (0..self.num_bs())
            .map(|j| {
                let share: f64 = (j * k..(j + 1) * k).map(|a| dir[a].norm_sqr()).sum();
                if share > 0.0 { self.system.bs_power_budget_w / share } else { f64::INFINITY }
            })
            .fold(f64::INFINITY, f64::min);
        let eta = self.system.efficiency_coeff;
        let mut p = if eta > 0.0 { 1.0 / eta - 1.0 / g } else { cap };
        if cfg.snr_case == SnrCase::Enforced {
            p = p.max(phy::MIN_URLLC_SNR / g);
        }
        outer(&dir) * C64::new(p.clamp(0.0, cap), 0.0)
    }

    fn snr(&self, m: &CMatrix, h: &CVector) -> f64 {
        quad_form(m, h) / self.floor()
    }

    fn embb_marginal(&self, h: &[CVector], s: usize, v: &CMatrix) -> f64 {
        let profit: f64 = self.embb_groups[s].iter().map(|&u| self.snr(v, &h[u]).ln_1p()).sum();
        profit - self.system.efficiency_coeff * trace_re(v)
    }

    fn urllc_marginal(&self, h: &[CVector], i: usize, g: &CMatrix) -> f64 {
        let snr = self.snr(g, &h[self.members[i].topo]);
        self.system.priority_weight * (snr.ln_1p() + self.urllc_profit(i) - self.system.efficiency_coeff * trace_re(g))
    }

    /// Reserved URLLC bandwidth of `mask` at the channel uses the covariances
    /// `g` would need.
    fn reserved(&self, cfg: &SlicingConfig, h: &[CVector], mask: &[bool], g: &[CMatrix]) -> f64 {
        let mut r = vec![0.0; mask.len()];
        for (i, &on) in mask.iter().enumerate() {
            if on {
                let req = &self.urllc[self.members[i].slice];
                let snr = self.snr(&g[i], &h[self.members[i].topo]);
                r[i] = phy::channel_uses(req.packet_bits, snr, req.decode_error).unwrap_or(f64::INFINITY);
            }
        }
        reserved_for(self, cfg, mask, &r)
    }
}

fn reserved_for(inst: &Instance, cfg: &SlicingConfig, mask: &[bool], r: &[f64]) -> f64 {
    let kappa = inst.system.numerology_constant;
    let terms: Vec<_> = inst
        .members
        .iter()
        .map(|m| {
            let req = &inst.urllc[m.slice];
            phy::reservation_term(cfg.algorithm.reservation(), req.arrival_rate, kappa, req.deadline_s)
        })
        .collect();
    let margin = phy::reservation_margin(cfg.algorithm.reservation(), inst.blocking_target()).unwrap_or(0.0);
    phy::reserved_bandwidth(&terms, margin, mask, r)
}

/// Result of optimizing one channel sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub index: u64,
    pub accepted: Vec<bool>,
    pub bandwidth_hz: Vec<f64>,
    /// URLLC UEs active in the final iterate.
    pub mask: Vec<bool>,
    pub objective: f64,
    /// Objective after every accepted alternation; nondecreasing.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_tightness: f64,
}

struct Iterate {
    accepted: Vec<bool>,
    omega: Vec<f64>,
    mask: Vec<bool>,
    v: Vec<CMatrix>,
    g: Vec<CMatrix>,
    objective: f64,
    tightness: f64,
}

fn solve_or_best(p: &ConvexSubproblem, opts: &SolverOptions) -> Option<SolveResult> {
    match solver::solve(p, opts) {
        Ok(r) => Some(r),
        Err(Error::MaxIterations { best, .. }) => Some(*best),
        Err(e) => {
            log::debug!("subproblem solve failed: {e}");
            None
        }
    }
}

/// Alternates eMBB acceptance, the URLLC mask and the convex subproblem on
/// one channel sample until the objective stops improving.
fn solve_sample(inst: &Instance, cfg: &SlicingConfig, index: u64) -> Result<SampleOutcome> {
    let h = sample_channels(&inst.topology, ChannelStream::Slot, index).h;
    let n = inst.num_embb();
    let nu = inst.num_urllc_ues();
    let sys = &inst.system;
    let budget = sys.bs_power_budget_w;
    let w_total = sys.total_bandwidth_hz;

    let shadow_omega = vec![if n > 0 { w_total / n as f64 } else { 0.0 }; n];
    let mut cur = Iterate {
        accepted: vec![false; n],
        omega: shadow_omega.clone(),
        mask: vec![false; nu],
        v: (0..n).map(|s| inst.embb_shadow(cfg, &h, s)).collect(),
        g: inst.members.iter().map(|m| inst.urllc_shadow(cfg, &h[m.topo])).collect(),
        objective: f64::NEG_INFINITY,
        tightness: 0.0,
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_alternations {
        iterations += 1;
        // eMBB acceptance at fixed covariances, bandwidths and mask.
        let w_u = inst.reserved(cfg, &h, &cur.mask, &cur.g);
        let mut urllc_bs = vec![0.0; inst.num_bs()];
        for (i, &on) in cur.mask.iter().enumerate() {
            if on {
                for (acc, p) in urllc_bs.iter_mut().zip(inst.bs_powers(&cur.g[i])) {
                    *acc += p;
                }
            }
        }
        let embb_bs: Vec<Vec<f64>> = cur.v.iter().map(|v| inst.bs_powers(v)).collect();
        let qos_ok: Vec<bool> = (0..n)
            .map(|s| {
                inst.embb_groups[s]
                    .iter()
                    .all(|&u| phy::embb_rate(cur.omega[s], inst.snr(&cur.v[s], &h[u])) >= inst.embb_rates[s] * (1.0 - CHECK_SLACK))
            })
            .collect();
        let utilities: Vec<f64> = match cfg.acceptance {
            AcceptancePolicy::Utility => (0..n).map(|s| inst.embb_marginal(&h, s, &cur.v[s])).collect(),
            AcceptancePolicy::Feasibility => vec![1.0; n],
        };
        let accepted = embb_acceptance(&utilities, |b| {
            let mut bw = w_u;
            let mut bs = urllc_bs.clone();
            for s in (0..n).filter(|&s| b[s]) {
                if !qos_ok[s] {
                    return false;
                }
                bw += cur.omega[s];
                for (acc, p) in bs.iter_mut().zip(&embb_bs[s]) {
                    *acc += p;
                }
            }
            bw <= w_total * (1.0 + CHECK_SLACK) && bs.iter().all(|&p| p <= budget * (1.0 + CHECK_SLACK))
        });

        // URLLC mask at fixed acceptance and bandwidths.
        let omega_fixed: Vec<f64> = (0..n).map(|s| if accepted[s] { cur.omega[s] } else { 0.0 }).collect();
        let mask = choose_mask(inst, cfg, &h, &accepted, &omega_fixed, &cur.g)?;

        // Bandwidths and covariances at fixed binaries.
        let solve_with = |mask: &[bool]| solve_or_best(&inst.subproblem(cfg, &h, &accepted, None, mask), &cfg.solver);
        let mut result = solve_with(&mask).map(|r| (mask.clone(), r));
        let worse = result.as_ref().is_none_or(|(_, r)| r.objective < cur.objective);
        if worse && mask != cur.mask {
            if let Some(r) = solve_with(&cur.mask) {
                if result.as_ref().is_none_or(|(_, best)| r.objective > best.objective) {
                    result = Some((cur.mask.clone(), r));
                }
            }
        }
        let Some((mask, res)) = result.filter(|(_, r)| r.objective >= cur.objective) else {
            converged = true;
            break;
        };
        let previous = cur.objective;
        for s in 0..n {
            if accepted[s] {
                cur.v[s] = res.v[s].matrix.clone();
                cur.omega[s] = res.embb_bandwidth_hz[s];
            } else {
                cur.omega[s] = shadow_omega[s];
            }
        }
        for i in 0..nu {
            if mask[i] {
                cur.g[i] = res.g[i].matrix.clone();
            }
        }
        cur.accepted = accepted;
        cur.mask = mask;
        cur.objective = res.objective;
        cur.tightness = res.max_tightness_ratio();
        trace.push(res.objective);
        if previous.is_finite() && (res.objective - previous).abs() <= cfg.convergence_tol * res.objective.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if trace.is_empty() {
        return Err(Error::Infeasible(format!("sample {index}: no feasible iterate")));
    }
    let bandwidth_hz = (0..n).map(|s| if cur.accepted[s] { cur.omega[s] } else { 0.0 }).collect();
    Ok(SampleOutcome {
        index,
        accepted: cur.accepted,
        bandwidth_hz,
        mask: cur.mask,
        objective: cur.objective,
        trace,
        iterations,
        converged,
        max_tightness: cur.tightness,
    })
}

/// URLLC mask at fixed eMBB decisions; feasibility is decided with the
/// covariances free.
fn choose_mask(
    inst: &Instance,
    cfg: &SlicingConfig,
    h: &[CVector],
    accepted: &[bool],
    omega: &[f64],
    g: &[CMatrix],
) -> Result<Vec<bool>> {
    let utilities: Vec<f64> = (0..inst.num_urllc_ues()).map(|i| inst.urllc_marginal(h, i, &g[i])).collect();
    // Channel uses at the largest SNR any covariance could reach give a
    // lower bound on the reserved bandwidth of a mask.
    let sys = &inst.system;
    let k = inst.topology.params.antennas_per_bs;
    let r_min: Vec<f64> = inst
        .members
        .iter()
        .map(|m| {
            let hv = &h[m.topo];
            let amp: f64 = (0..inst.num_bs()).map(|j| (j * k..(j + 1) * k).map(|a| hv[a].norm_sqr()).sum::<f64>().sqrt()).sum();
            let snr_max = sys.bs_power_budget_w * amp * amp / inst.floor();
            let req = &inst.urllc[m.slice];
            phy::channel_uses(req.packet_bits, snr_max, req.decode_error).unwrap_or(f64::INFINITY)
        })
        .collect();
    let embb_bw: f64 = omega.iter().zip(accepted).filter(|(_, a)| **a).map(|(w, _)| w).sum();
    let mut memo: HashMap<Vec<bool>, bool> = HashMap::new();
    let mut feasible = |mask: &[bool]| {
        if embb_bw + reserved_for(inst, cfg, mask, &r_min) > sys.total_bandwidth_hz * (1.0 + CHECK_SLACK) {
            return false;
        }
        *memo.entry(mask.to_vec()).or_insert_with(|| {
            check_feasibility(&inst.subproblem(cfg, h, accepted, Some(omega), mask), &cfg.solver).feasible
        })
    };
    match cfg.algorithm {
        Algorithm::EsAb => es_mask(&utilities, &mut feasible),
        Algorithm::IaraAb | Algorithm::IaraA => Ok(grm_mask(&utilities, &mut feasible)),
        Algorithm::Irhs => Err(config("the baseline does not mask individual URLLC UEs")),
    }
}

/// Greedy slice-level admission over eMBB and URLLC slices together, each
/// ranked by its standalone utility; URLLC slices keep all UEs active.
fn solve_sample_irhs(inst: &Instance, cfg: &SlicingConfig, index: u64) -> Result<(SampleOutcome, Vec<bool>)> {
    let h = sample_channels(&inst.topology, ChannelStream::Slot, index).h;
    let n = inst.num_embb();
    let nu = inst.num_urllc_ues();
    let ns = inst.urllc.len();
    let g: Vec<CMatrix> = inst.members.iter().map(|m| inst.urllc_shadow(cfg, &h[m.topo])).collect();
    let mut items: Vec<(f64, usize)> = (0..n)
        .map(|s| {
            let u = match cfg.acceptance {
                AcceptancePolicy::Utility => inst.embb_marginal(&h, s, &inst.embb_shadow(cfg, &h, s)),
                AcceptancePolicy::Feasibility => 1.0,
            };
            (u, s)
        })
        .collect();
    for s in 0..ns {
        let u: f64 = (0..nu).filter(|&i| inst.members[i].slice == s).map(|i| inst.urllc_marginal(&h, i, &g[i])).sum();
        items.push((u, n + s));
    }
    items.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut embb = vec![false; n];
    let mut slices = vec![false; ns];
    let active = |slices: &[bool]| (0..nu).map(|i| slices[inst.members[i].slice]).collect::<Vec<_>>();
    for (u, k) in items {
        if !(u > 0.0) {
            continue;
        }
        let (mut e, mut sl) = (embb.clone(), slices.clone());
        if k < n {
            e[k] = true;
        } else {
            sl[k - n] = true;
        }
        if check_feasibility(&inst.subproblem(cfg, &h, &e, None, &active(&sl)), &cfg.solver).feasible {
            embb = e;
            slices = sl;
        }
    }
    let mask = active(&slices);
    let res = solve_or_best(&inst.subproblem(cfg, &h, &embb, None, &mask), &cfg.solver)
        .ok_or_else(|| Error::Infeasible(format!("sample {index}: admitted set does not solve")))?;
    let outcome = SampleOutcome {
        index,
        bandwidth_hz: (0..n).map(|s| if embb[s] { res.embb_bandwidth_hz[s] } else { 0.0 }).collect(),
        accepted: embb,
        mask,
        objective: res.objective,
        trace: vec![res.objective],
        iterations: 1,
        converged: true,
        max_tightness: res.max_tightness_ratio(),
    };
    Ok((outcome, slices))
}

/// Slot-level variables shared by every minislot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    pub accepted: Vec<bool>,
    pub bandwidth_hz: Vec<f64>,
    /// Number of samples that accepted each eMBB slice.
    pub counts: Vec<usize>,
    pub samples: usize,
    /// URLLC slices served; only the slice-level baseline declines any.
    pub urllc_accepted: Vec<bool>,
    /// eMBB slices declined during restoration, in order.
    pub declined: Vec<usize>,
}

impl SlotDecision {
    pub fn embb_bandwidth_hz(&self) -> f64 {
        self.accepted.iter().zip(&self.bandwidth_hz).filter(|(a, _)| **a).map(|(_, w)| w).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotRun {
    pub decision: SlotDecision,
    pub outcomes: Vec<SampleOutcome>,
    /// Samples whose optimization failed.
    pub failed: Vec<u64>,
}

fn slot_mask(inst: &Instance, urllc_accepted: &[bool], irhs: bool) -> Vec<bool> {
    (0..inst.num_urllc_ues()).map(|i| irhs && urllc_accepted[inst.members[i].slice]).collect()
}

/// Whether the fixed slot variables leave channel set `h` feasible.
fn slot_feasible(inst: &Instance, cfg: &SlicingConfig, h: &[CVector], accepted: &[bool], omega: &[f64], urllc: &[bool]) -> bool {
    let mask = slot_mask(inst, urllc, cfg.algorithm == Algorithm::Irhs);
    check_feasibility(&inst.subproblem(cfg, h, accepted, Some(omega), &mask), &cfg.solver).feasible
}

/// Optimizes every slot sample, then restores common slot variables that
/// keep all `M` samples feasible.
pub fn run_slot(inst: &Instance, cfg: &SlicingConfig) -> Result<SlotRun> {
    let m = cfg.samples;
    if m == 0 {
        return Err(config("a slot decision needs at least one sample"));
    }
    let irhs = cfg.algorithm == Algorithm::Irhs;
    let results: Vec<(u64, Result<(SampleOutcome, Vec<bool>)>)> = (0..m as u64)
        .into_par_iter()
        .map(|k| {
            let r = if irhs { solve_sample_irhs(inst, cfg, k) } else { solve_sample(inst, cfg, k).map(|o| (o, Vec::new())) };
            (k, r)
        })
        .collect();
    let mut outcomes = Vec::new();
    let mut urllc_votes = vec![0usize; inst.urllc.len()];
    let mut failed = Vec::new();
    for (k, r) in results {
        match r {
            Ok((o, slices)) => {
                for (v, on) in urllc_votes.iter_mut().zip(&slices) {
                    *v += *on as usize;
                }
                outcomes.push(o);
            }
            Err(e) => {
                log::warn!("slot sample {k} failed: {e}");
                failed.push(k);
            }
        }
    }
    if (outcomes.len() as f64) < cfg.quorum * m as f64 {
        return Err(Error::Quorum { solved: outcomes.len(), total: m, quorum: cfg.quorum * 100.0 });
    }
    let urllc_accepted: Vec<bool> = if irhs {
        urllc_votes.iter().map(|&c| 2 * c >= outcomes.len()).collect()
    } else {
        vec![true; inst.urllc.len()]
    };

    let channels: Vec<Vec<CVector>> =
        outcomes.iter().map(|o| sample_channels(&inst.topology, ChannelStream::Slot, o.index).h).collect();
    let per_w: Vec<Vec<f64>> = outcomes.iter().map(|o| o.bandwidth_hz.clone()).collect();
    let per_b: Vec<Vec<bool>> = outcomes.iter().map(|o| o.accepted.clone()).collect();
    let mut urllc_final = urllc_accepted.clone();
    let restored = restore_slot_vars(&per_w, &per_b, |acc, omega| {
        channels.par_iter().all(|h| slot_feasible(inst, cfg, h, acc, omega, &urllc_accepted))
    });
    let restored = match restored {
        Ok(r) => r,
        Err(_) if irhs => {
            // The URLLC reservation alone does not fit; decline URLLC slices
            // by vote count until the empty eMBB set is feasible.
            let n = inst.num_embb();
            let mut order: Vec<usize> = (0..inst.urllc.len()).filter(|&s| urllc_final[s]).collect();
            order.sort_by_key(|&s| (urllc_votes[s], s));
            for s in order {
                urllc_final[s] = false;
                let ok = channels.par_iter().all(|h| slot_feasible(inst, cfg, h, &vec![false; n], &vec![0.0; n], &urllc_final));
                if ok {
                    break;
                }
            }
            let per_w = vec![vec![0.0; n]; per_w.len()];
            let per_b = vec![vec![false; n]; per_b.len()];
            let mut r = restore_slot_vars(&per_w, &per_b, |_, _| true)?;
            r.counts = (0..n).map(|s| outcomes.iter().filter(|o| o.accepted[s]).count()).collect();
            r.declined = (0..n).filter(|&s| r.counts[s] > 0).collect();
            r
        }
        Err(e) => return Err(e),
    };
    let decision = SlotDecision {
        accepted: restored.accepted,
        bandwidth_hz: restored.bandwidth_hz,
        counts: restored.counts,
        samples: m,
        urllc_accepted: urllc_final,
        declined: restored.declined,
    };
    Ok(SlotRun { decision, outcomes, failed })
}

/// Fraction of `count` fresh channel samples on which the slot decision
/// stays feasible.
pub fn validate_slot(inst: &Instance, cfg: &SlicingConfig, decision: &SlotDecision, count: usize) -> f64 {
    if count == 0 {
        return 1.0;
    }
    let ok = (0..count as u64)
        .into_par_iter()
        .filter(|&k| {
            let h = sample_channels(&inst.topology, ChannelStream::Validation, k).h;
            slot_feasible(inst, cfg, &h, &decision.accepted, &decision.bandwidth_hz, &decision.urllc_accepted)
        })
        .count();
    ok as f64 / count as f64
}

/// Realized per-minislot decisions and metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinislotDecision {
    pub t: u64,
    pub mask: Vec<bool>,
    #[serde(with = "serde_complex::vectors")]
    pub v: Vec<CVector>,
    #[serde(with = "serde_complex::vectors")]
    pub g: Vec<CVector>,
    /// Minislot utility of every eMBB slice, including the power credit of
    /// declined slices.
    pub embb_utility: Vec<f64>,
    pub urllc_utility: Vec<f64>,
    /// `Σ eMBB + ρ̂·Σ URLLC`.
    pub total_utility: f64,
    pub bs_power_w: Vec<f64>,
    pub embb_power_w: f64,
    pub urllc_power_w: f64,
    /// Reserved URLLC bandwidth at the realized channel uses.
    pub urllc_bandwidth_hz: f64,
    /// Every accepted eMBB UE meets its rate with the extracted beams.
    pub qos_met: bool,
    pub max_tightness: f64,
    pub randomized: usize,
    pub violation: Option<String>,
}

/// Scores a randomized beamformer candidate after restoring the per-BS
/// powers of the relaxed covariance.
struct BlockScore<'a> {
    channels: Vec<&'a CVector>,
    floor: f64,
    eta: f64,
    powers: Vec<f64>,
    k: usize,
}

impl BeamformerCandidateScore for BlockScore<'_> {
    fn rescale(&self, mut w: CVector) -> CVector {
        for (j, &p) in self.powers.iter().enumerate() {
            let seg = j * self.k..(j + 1) * self.k;
            let cur: f64 = seg.clone().map(|a| w[a].norm_sqr()).sum();
            let f = if cur > 0.0 { (p.max(0.0) / cur).sqrt() } else { 0.0 };
            for a in seg {
                w[a] *= f;
            }
        }
        w
    }

    fn score(&self, w: &CVector) -> f64 {
        let gain: f64 = self.channels.iter().map(|h| (h.dotc(w).norm_sqr() / self.floor).ln_1p()).sum();
        gain - self.eta * w.norm_squared()
    }
}

/// Masks URLLC UEs, solves and beamforms for the channels sensed at `t`.
pub fn schedule_minislot(inst: &Instance, cfg: &SlicingConfig, decision: &SlotDecision, t: u64) -> Result<MinislotDecision> {
    let h = sample_channels(&inst.topology, ChannelStream::Minislot, t).h;
    let n = inst.num_embb();
    let nu = inst.num_urllc_ues();
    let dim = inst.dim();
    let irhs = cfg.algorithm == Algorithm::Irhs;
    let accepted = &decision.accepted;
    let omega = &decision.bandwidth_hz;

    let mask = if irhs {
        slot_mask(inst, &decision.urllc_accepted, true)
    } else {
        let g: Vec<CMatrix> = inst.members.iter().map(|m| inst.urllc_shadow(cfg, &h[m.topo])).collect();
        choose_mask(inst, cfg, &h, accepted, omega, &g)?
    };
    let mut violation = None;
    let mut solved = solve_or_best(&inst.subproblem(cfg, &h, accepted, Some(omega), &mask), &cfg.solver).map(|r| (mask.clone(), r));
    if solved.is_none() && mask.iter().any(|&b| b) {
        violation = Some("URLLC mask dropped to keep the minislot feasible".to_string());
        let empty = vec![false; nu];
        solved = solve_or_best(&inst.subproblem(cfg, &h, accepted, Some(omega), &empty), &cfg.solver).map(|r| (empty, r));
    }
    let (mask, res) = match solved {
        Some(x) => x,
        None => {
            violation = Some("slot decision infeasible for the sensed channels".to_string());
            let empty = vec![false; nu];
            let zero_v = vec![CVector::zeros(dim); n];
            let zero_g = vec![CVector::zeros(dim); nu];
            return Ok(realize(inst, cfg, decision, t, &h, empty, zero_v, zero_g, 0.0, 0, violation));
        }
    };

    let k = inst.topology.params.antennas_per_bs;
    let floor = inst.floor();
    let eta = inst.system.efficiency_coeff;
    let mut randomized = 0;
    let mut extract = |m: &CMatrix, channels: Vec<&CVector>, block: u32| -> Result<CVector> {
        if trace_re(m) <= 0.0 {
            return Ok(CVector::zeros(dim));
        }
        let scorer = BlockScore { channels, floor, eta, powers: inst.bs_powers(m), k };
        let mut rng = substream(inst.topology.seed, Domain::Randomization, t, 0, block);
        let ex = extract_beamformer(m, cfg.randomization_candidates, &mut rng, &scorer)?;
        if ex.path == ExtractionPath::Randomized {
            randomized += 1;
        }
        Ok(ex.w)
    };
    let mut v = Vec::with_capacity(n);
    for s in 0..n {
        if accepted[s] {
            let ch = inst.embb_groups[s].iter().map(|&u| &h[u]).collect();
            v.push(extract(&res.v[s].matrix, ch, s as u32)?);
        } else {
            v.push(CVector::zeros(dim));
        }
    }
    let mut g = Vec::with_capacity(nu);
    for i in 0..nu {
        if mask[i] {
            g.push(extract(&res.g[i].matrix, vec![&h[inst.members[i].topo]], (n + i) as u32)?);
        } else {
            g.push(CVector::zeros(dim));
        }
    }
    let tight = res.max_tightness_ratio();
    Ok(realize(inst, cfg, decision, t, &h, mask, v, g, tight, randomized, violation))
}

#[allow(clippy::too_many_arguments)]
fn realize(
    inst: &Instance,
    cfg: &SlicingConfig,
    decision: &SlotDecision,
    t: u64,
    h: &[CVector],
    mask: Vec<bool>,
    v: Vec<CVector>,
    g: Vec<CVector>,
    max_tightness: f64,
    randomized: usize,
    violation: Option<String>,
) -> MinislotDecision {
    let sys = &inst.system;
    let floor = inst.floor();
    let budgets = vec![sys.bs_power_budget_w; inst.num_bs()];
    let k = inst.topology.params.antennas_per_bs;
    let seg_powers = |w: &CVector| -> Vec<f64> {
        (0..inst.num_bs()).map(|j| (j * k..(j + 1) * k).map(|a| w[a].norm_sqr()).sum()).collect()
    };
    let snr = |w: &CVector, hv: &CVector| hv.dotc(w).norm_sqr() / floor;

    let mut bs_power = vec![0.0; inst.num_bs()];
    let mut qos_met = true;
    let mut embb_utility = Vec::with_capacity(v.len());
    let mut embb_power = 0.0;
    for (s, w) in v.iter().enumerate() {
        let acc = decision.accepted[s];
        let snrs: Vec<f64> = inst.embb_groups[s].iter().map(|&u| snr(w, &h[u])).collect();
        let p = seg_powers(w);
        if acc {
            for (b, x) in bs_power.iter_mut().zip(&p) {
                *b += x;
            }
            embb_power += w.norm_squared();
            qos_met &= snrs
                .iter()
                .all(|&x| phy::embb_rate(decision.bandwidth_hz[s], x) >= inst.embb_rates[s] * (1.0 - 1e-6));
        }
        embb_utility.push(phy::embb_utility_minislot(acc, &snrs, &p, sys.efficiency_coeff, &budgets));
    }

    let mut urllc_power = 0.0;
    let mut r = vec![0.0; mask.len()];
    let ue_snr: Vec<f64> = (0..mask.len()).map(|i| snr(&g[i], &h[inst.members[i].topo])).collect();
    let ue_powers: Vec<Vec<f64>> = g.iter().map(seg_powers).collect();
    for i in 0..mask.len() {
        if mask[i] {
            for (b, x) in bs_power.iter_mut().zip(&ue_powers[i]) {
                *b += x;
            }
            urllc_power += g[i].norm_squared();
            let req = &inst.urllc[inst.members[i].slice];
            r[i] = phy::channel_uses(req.packet_bits, ue_snr[i], req.decode_error).unwrap_or(f64::INFINITY);
        }
    }
    let urllc_utility: Vec<f64> = inst
        .urllc
        .iter()
        .enumerate()
        .map(|(s, req)| {
            let idx: Vec<usize> = (0..mask.len()).filter(|&i| inst.members[i].slice == s).collect();
            let m: Vec<bool> = idx.iter().map(|&i| mask[i]).collect();
            let snrs: Vec<f64> = idx.iter().map(|&i| ue_snr[i]).collect();
            let pw: Vec<Vec<f64>> = idx.iter().map(|&i| ue_powers[i].clone()).collect();
            phy::urllc_utility_minislot(&m, &snrs, req.deadline_s, sys.urllc_profit_const, &pw, sys.efficiency_coeff, &budgets)
        })
        .collect();
    let total_utility = embb_utility.iter().sum::<f64>() + sys.priority_weight * urllc_utility.iter().sum::<f64>();
    MinislotDecision {
        t,
        urllc_bandwidth_hz: reserved_for(inst, cfg, &mask, &r),
        mask,
        v,
        g,
        embb_utility,
        urllc_utility,
        total_utility,
        bs_power_w: bs_power,
        embb_power_w: embb_power,
        urllc_power_w: urllc_power,
        qos_met,
        max_tightness,
        randomized,
        violation,
    }
}

/// Runs every minislot of the slot in parallel, in minislot order.
pub fn run_minislots(inst: &Instance, cfg: &SlicingConfig, decision: &SlotDecision) -> Result<Vec<MinislotDecision>> {
    (0..cfg.minislots as u64).into_par_iter().map(|t| schedule_minislot(inst, cfg, decision, t)).collect()
}
