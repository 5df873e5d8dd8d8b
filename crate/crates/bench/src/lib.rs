//! Deterministic fixtures for the benchmarks.

use ranslice_core::channel::{sample_channels, ChannelStream, SliceKind, SliceLayout, Topology, TopologyParams};
use ranslice_core::phy::{self, Reservation, SystemParams};
use ranslice_core::queueing::{BlockingScenario, BlockingSlice};
use ranslice_core::slicing::{Instance, Mode};
use ranslice_core::solver::{ConvexSubproblem, EmbbBlock, SnrCase, UrllcUe};

/// The default three-eMBB, two-URLLC request set on a generated topology.
pub fn default_instance(seed: u64) -> Instance {
    Instance::new(
        &TopologyParams::default(),
        &SystemParams::default(),
        &phy::default_embb_requests(),
        &phy::default_urllc_requests(),
        Mode::Multicast,
        seed,
    )
    .expect("default instance")
}

/// A slot subproblem with free eMBB bandwidths, built from one channel draw.
pub fn subproblem(embb_ues: &[usize], urllc_ues: usize, seed: u64) -> ConvexSubproblem {
    let params = TopologyParams::default();
    let layout = SliceLayout { embb: embb_ues.to_vec(), urllc: vec![urllc_ues] };
    let topo = Topology::generate(&params, &layout, seed).expect("topology");
    let h = sample_channels(&topo, ChannelStream::Slot, 0).h;
    let sys = SystemParams::default();
    let of = |kind: SliceKind, s: usize| {
        topo.ues.iter().zip(&h).filter(|(u, _)| u.key.kind == kind && u.key.slice == s).map(|(_, c)| c.clone()).collect::<Vec<_>>()
    };
    let embb = (0..embb_ues.len())
        .map(|s| EmbbBlock { accepted: true, min_rate_bps: 2e6, channels: of(SliceKind::Embb, s), fixed_bandwidth_hz: None })
        .collect();
    let urllc = of(SliceKind::Urllc, 0)
        .into_iter()
        .map(|channel| UrllcUe {
            slice: 0,
            active: true,
            channel,
            packet_bits: 160.0,
            decode_error: 2e-8,
            deadline_s: 1e-3,
            arrival_rate: 0.1,
        })
        .collect();
    ConvexSubproblem {
        num_bs: params.num_bs,
        antennas_per_bs: params.antennas_per_bs,
        noise_floor_w: params.noise_floor(),
        bs_power_budget_w: vec![sys.bs_power_budget_w; params.num_bs],
        total_bandwidth_hz: sys.total_bandwidth_hz,
        numerology_constant: sys.numerology_constant,
        efficiency_coeff: sys.efficiency_coeff,
        priority_weight: sys.priority_weight,
        urllc_profit_const: sys.urllc_profit_const,
        reservation: Reservation::Staffed,
        blocking_target: 1e-6,
        snr_case: SnrCase::Enforced,
        embb,
        urllc,
        num_urllc_slices: 1,
    }
}

/// `slices` slices of `ues` UEs each, with `servers` widest-slice units of
/// reserved bandwidth.
pub fn blocking_scenario(slices: usize, ues: usize, servers: f64) -> BlockingScenario {
    let slices: Vec<BlockingSlice> = (0..slices)
        .map(|s| {
            let d = 1e-3 * (1 + s % 2) as f64;
            BlockingSlice {
                bandwidths_hz: vec![1e4 * (1 + s) as f64; ues],
                duration_s: d,
                arrival_rates: vec![0.4 / d; ues],
                deadline_s: None,
            }
        })
        .collect();
    let widest = 1e4 * slices.len() as f64;
    BlockingScenario { reserved_bandwidth_hz: servers * widest, slices }
}
