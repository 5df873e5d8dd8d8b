//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ranslice_core::linalg::{CMatrix, CVector};
use ranslice_core::phy::{self, Reservation};
use ranslice_core::queueing::{BlockingScenario, BlockingSlice};
use ranslice_core::solver::{ConvexSubproblem, EmbbBlock, SnrCase, UrllcUe};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Maximizer of a unimodal `f` on `[lo, hi]` by golden-section search.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Erlang-B by the standard recursion `B(k) = ρB(k−1)/(k + ρB(k−1))`.
pub fn erlang_b_recursion(load: f64, servers: u32) -> f64 {
    let mut b = 1.0;
    for k in 1..=servers {
        b = load * b / (f64::from(k) + load * b);
    }
    b
}

/// Blocking per slice from the product form over per-UE packet counts,
/// without merging UEs of equal bandwidth.
pub fn blocking_by_ue_enumeration(sc: &BlockingScenario) -> Vec<f64> {
    let mut ues = Vec::new();
    for (s, sl) in sc.slices.iter().enumerate() {
        for (&w, &l) in sl.bandwidths_hz.iter().zip(&sl.arrival_rates) {
            ues.push((s, w, l * sl.duration_s));
        }
    }
    let cap = sc.reserved_bandwidth_hz * (1.0 + 1e-12);
    let mut states: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    for &(_, w, rho) in &ues {
        let mut next = Vec::new();
        for &(used, weight) in &states {
            let mut n = 0u32;
            let mut term = weight;
            while used + f64::from(n) * w <= cap {
                next.push((used + f64::from(n) * w, term));
                n += 1;
                term *= rho / f64::from(n);
            }
        }
        states = next;
    }
    let total: f64 = states.iter().map(|s| s.1).sum();
    (0..sc.slices.len())
        .map(|k| {
            let wmax = ues.iter().filter(|u| u.0 == k).map(|u| u.1).fold(0.0, f64::max);
            // All UEs of a slice share ω in the generated scenarios.
            states.iter().filter(|(used, _)| used + wmax > cap).map(|s| s.1).sum::<f64>() / total
        })
        .collect()
}

/// Random loss system with equal per-UE bandwidth inside each slice.
pub fn random_blocking_scenario(r: &mut impl Rng, slices: usize, max_ues: usize, servers: f64) -> BlockingScenario {
    let slices: Vec<BlockingSlice> = (0..slices)
        .map(|_| {
            let n = r.random_range(1..=max_ues);
            let w = r.random_range(1.0..4.0_f64).round() * 1e4;
            let d = r.random_range(1..=4) as f64 * 1e-3;
            let rho = r.random_range(0.05..0.9);
            BlockingSlice { bandwidths_hz: vec![w; n], duration_s: d, arrival_rates: vec![rho / d; n], deadline_s: None }
        })
        .collect();
    let wmax = slices.iter().map(|s| s.bandwidths_hz[0]).fold(0.0, f64::max);
    BlockingScenario { reserved_bandwidth_hz: servers * wmax, slices }
}

/// `Q⁻¹(p)` by bisection on the tail function.
pub fn q_inverse_bisection(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if phy::q_function(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

pub fn complex_gaussian(r: &mut impl Rng, n: usize, scale: f64) -> CVector {
    let s = (scale / 2.0).sqrt();
    CVector::from_iterator(
        n,
        (0..n).map(|_| Complex64::new(s * r.sample::<f64, _>(StandardNormal), s * r.sample::<f64, _>(StandardNormal))),
    )
}

/// Eigenvalue-clipping projection onto the PSD cone.
pub fn psd_projection(m: &CMatrix) -> CMatrix {
    let h = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = h.symmetric_eigen();
    let d = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&x| Complex64::new(x.max(0.0), 0.0)));
    &eig.eigenvectors * CMatrix::from_diagonal(&d) * eig.eigenvectors.adjoint()
}

fn quad(m: &CMatrix, h: &CVector) -> f64 {
    (h.adjoint() * m * h)[(0, 0)].re
}

/// Maximizes `Σ ln(1 + hᴴVh/σ) − η·tr V` over `V ⪰ 0` by accelerated
/// projected gradient with adaptive restart.
pub fn multicast_projected_gradient(chans: &[CVector], floor: f64, eta: f64, iters: usize) -> CMatrix {
    let n = chans[0].len();
    let f = |v: &CMatrix| chans.iter().map(|h| (quad(v, h) / floor).ln_1p()).sum::<f64>() - eta * v.trace().re;
    let grad = |v: &CMatrix| {
        let mut g = CMatrix::identity(n, n) * Complex64::new(-eta, 0.0);
        for h in chans {
            let w = 1.0 / (floor + quad(v, h));
            g += h * h.adjoint() * Complex64::new(w, 0.0);
        }
        g
    };
    let lip: f64 = chans.iter().map(|h| h.norm_squared().powi(2) / (floor * floor)).sum();
    let step = Complex64::new(1.0 / lip, 0.0);
    let mut x = CMatrix::zeros(n, n);
    let mut y = x.clone();
    let mut tk: f64 = 1.0;
    let mut fx = f(&x);
    for _ in 0..iters {
        let xn = psd_projection(&(&y + grad(&y) * step));
        let fxn = f(&xn);
        if fxn < fx {
            // Restart the momentum.
            y = x.clone();
            tk = 1.0;
            continue;
        }
        let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        y = &xn + (&xn - &x) * Complex64::new((tk - 1.0) / tn, 0.0);
        x = xn;
        fx = fxn;
        tk = tn;
    }
    x
}

/// A subproblem on a normalized scale (noise floor 1) with slack QoS and
/// power constraints, so that the optimum is the unconstrained maximizer.
pub fn slack_subproblem(r: &mut impl Rng, num_bs: usize, antennas: usize, embb_ues: &[usize], urllc_ues: usize) -> ConvexSubproblem {
    let n = num_bs * antennas;
    let embb = embb_ues
        .iter()
        .map(|&k| EmbbBlock {
            accepted: true,
            min_rate_bps: 1e-3,
            channels: (0..k).map(|_| complex_gaussian(r, n, 1.0)).collect(),
            fixed_bandwidth_hz: Some(1e3),
        })
        .collect();
    let urllc = (0..urllc_ues)
        .map(|_| UrllcUe {
            slice: 0,
            active: true,
            channel: complex_gaussian(r, n, 1.0),
            packet_bits: 160.0,
            decode_error: 1e-5,
            deadline_s: 1e-3,
            arrival_rate: 0.1,
        })
        .collect();
    ConvexSubproblem {
        num_bs,
        antennas_per_bs: antennas,
        noise_floor_w: 1.0,
        bs_power_budget_w: vec![50.0; num_bs],
        total_bandwidth_hz: 1e7,
        numerology_constant: 0.032,
        efficiency_coeff: 1.0,
        priority_weight: 1.0,
        urllc_profit_const: 0.1,
        reservation: Reservation::Staffed,
        blocking_target: 1e-3,
        snr_case: SnrCase::Relaxed,
        embb,
        urllc,
        num_urllc_slices: usize::from(urllc_ues > 0),
    }
}

/// Oracle covariances for [`slack_subproblem`]: projected gradient for each
/// multicast block, the water-filling closed form for each URLLC UE.
pub fn slack_oracle(p: &ConvexSubproblem, iters: usize) -> (Vec<CMatrix>, Vec<CMatrix>) {
    let v = p.embb.iter().map(|b| multicast_projected_gradient(&b.channels, p.noise_floor_w, p.efficiency_coeff, iters)).collect();
    let g = p
        .urllc
        .iter()
        .map(|u| {
            let gain = u.channel.norm_squared() / p.noise_floor_w;
            let power = (1.0 / p.efficiency_coeff - 1.0 / gain).max(0.0);
            let dir = &u.channel / Complex64::new(u.channel.norm(), 0.0);
            &dir * dir.adjoint() * Complex64::new(power, 0.0)
        })
        .collect();
    (v, g)
}

/// One BS, one antenna, one single-UE eMBB slice with a slack rate floor:
/// the optimum is `V = clamp(1/η − 1/g, 0, E)`.
pub fn scalar_problem(gain: f64, eta: f64, budget: f64) -> ConvexSubproblem {
    ConvexSubproblem {
        num_bs: 1,
        antennas_per_bs: 1,
        noise_floor_w: 1.0,
        bs_power_budget_w: vec![budget],
        total_bandwidth_hz: 2e3,
        numerology_constant: 0.032,
        efficiency_coeff: eta,
        priority_weight: 1.0,
        urllc_profit_const: 0.1,
        reservation: Reservation::MeanOnly,
        blocking_target: 0.5,
        snr_case: SnrCase::Enforced,
        embb: vec![EmbbBlock {
            accepted: true,
            min_rate_bps: 1e-6,
            channels: vec![CVector::from_element(1, Complex64::new(gain.sqrt(), 0.0))],
            fixed_bandwidth_hz: Some(1e3),
        }],
        urllc: vec![],
        num_urllc_slices: 0,
    }
}
