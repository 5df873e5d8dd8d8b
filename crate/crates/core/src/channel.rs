//! Network geometry, large-scale link budgets and small-scale fading.
//!
//! Units: powers in watts, bandwidths in Hz, distances in km. dB values are
//! converted to linear scale only here.

use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::linalg::{CVector, C64};
use crate::rng::{substream, Domain};

/// Distance-dependent attenuation of the macro-cell model, in dB.
pub fn path_loss_db(distance_km: f64) -> Result<f64> {
    if !(distance_km > 0.0) {
        return Err(domain(format!("distance must be positive, got {distance_km}")));
    }
    Ok(128.1 + 37.6 * distance_km.log10())
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x_km: f64,
    pub y_km: f64,
}

impl Point {
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x_km - other.x_km).hypot(self.y_km - other.y_km)
    }

    pub fn norm(&self) -> f64 {
        self.x_km.hypot(self.y_km)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SliceKind {
    Embb,
    Urllc,
}

/// Identifies one UE: its slice class, slice index and position in the slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UeKey {
    pub kind: SliceKind,
    pub slice: usize,
    pub ue: usize,
}

impl UeKey {
    fn stream_group(&self) -> u32 {
        let class = match self.kind {
            SliceKind::Embb => 0,
            SliceKind::Urllc => 1 << 20,
        };
        class | self.slice as u32
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyParams {
    pub region_radius_km: f64,
    pub num_bs: usize,
    pub antennas_per_bs: usize,
    pub antenna_gain_db: f64,
    pub shadowing_std_db: f64,
    /// Receiver noise power σ² in watts.
    pub noise_power_w: f64,
    /// SNR loss φ from imperfect CSI.
    pub snr_loss: f64,
    /// Links shorter than this are evaluated at this distance.
    pub min_distance_km: f64,
}

impl Default for TopologyParams {
    fn default() -> Self {
        Self {
            region_radius_km: 0.5,
            num_bs: 3,
            antennas_per_bs: 2,
            antenna_gain_db: 5.0,
            shadowing_std_db: 10.0,
            noise_power_w: dbm_to_watts(-110.0),
            snr_loss: 1.5,
            min_distance_km: 0.035,
        }
    }
}

impl TopologyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.region_radius_km > 0.0) {
            return Err(Error::Config("region radius must be positive".into()));
        }
        if self.num_bs == 0 || self.antennas_per_bs == 0 {
            return Err(Error::Config("need at least one BS and one antenna".into()));
        }
        if !(self.noise_power_w > 0.0) {
            return Err(Error::Config("noise power must be positive".into()));
        }
        if !(self.snr_loss > 1.0) {
            return Err(Error::Config("SNR loss φ must exceed 1".into()));
        }
        if !(self.shadowing_std_db >= 0.0) || !(self.min_distance_km > 0.0) {
            return Err(Error::Config("shadowing std and minimum distance must be non-negative".into()));
        }
        Ok(())
    }

    /// Length of a stacked CoMP channel vector, J·K.
    pub fn dim(&self) -> usize {
        self.num_bs * self.antennas_per_bs
    }

    /// φ·σ², the denominator of every received SNR.
    pub fn noise_floor(&self) -> f64 {
        self.snr_loss * self.noise_power_w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UeSite {
    pub key: UeKey,
    pub position: Point,
    /// Log-normal shadowing towards each BS, in dB.
    pub shadowing_db: Vec<f64>,
}

/// A drawn network: BS sites on the boundary, UE sites inside the disc and
/// the per-link shadowing that stays fixed for the whole slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub params: TopologyParams,
    pub seed: u64,
    pub bs_positions: Vec<Point>,
    pub ues: Vec<UeSite>,
}

/// UE counts per slice, in slice order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SliceLayout {
    pub embb: Vec<usize>,
    pub urllc: Vec<usize>,
}

impl SliceLayout {
    pub fn keys(&self) -> Vec<UeKey> {
        let mut keys = Vec::new();
        for (s, &n) in self.embb.iter().enumerate() {
            keys.extend((0..n).map(|ue| UeKey { kind: SliceKind::Embb, slice: s, ue }));
        }
        for (s, &n) in self.urllc.iter().enumerate() {
            keys.extend((0..n).map(|ue| UeKey { kind: SliceKind::Urllc, slice: s, ue }));
        }
        keys
    }
}

pub fn bs_ring(params: &TopologyParams) -> Vec<Point> {
    let j = params.num_bs;
    if j == 1 {
        return vec![Point { x_km: 0.0, y_km: 0.0 }];
    }
    (0..j)
        .map(|b| {
            let a = std::f64::consts::FRAC_PI_2 + 2.0 * std::f64::consts::PI * b as f64 / j as f64;
            Point { x_km: params.region_radius_km * a.cos(), y_km: params.region_radius_km * a.sin() }
        })
        .collect()
}

impl Topology {
    /// Draws UE positions uniformly by area and per-link shadowing.
    pub fn generate(params: &TopologyParams, layout: &SliceLayout, seed: u64) -> Result<Self> {
        params.validate()?;
        let bs_positions = bs_ring(params);
        let ues = layout
            .keys()
            .into_iter()
            .map(|key| {
                let mut rng = substream(seed, Domain::Topology, 0, key.stream_group(), key.ue as u32);
                let radius = params.region_radius_km * rng.random::<f64>().sqrt();
                let angle = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                let position = Point { x_km: radius * angle.cos(), y_km: radius * angle.sin() };
                let shadowing_db = (0..params.num_bs)
                    .map(|_| params.shadowing_std_db * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                UeSite { key, position, shadowing_db }
            })
            .collect();
        Ok(Self { params: params.clone(), seed, bs_positions, ues })
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.bs_positions.len() != self.params.num_bs {
            return Err(Error::Config("BS position count differs from num_bs".into()));
        }
        for ue in &self.ues {
            if ue.position.norm() > self.params.region_radius_km * (1.0 + 1e-12) {
                return Err(Error::Config(format!("UE {:?} lies outside the region", ue.key)));
            }
            if ue.shadowing_db.len() != self.params.num_bs {
                return Err(Error::Config(format!("UE {:?} needs one shadowing value per BS", ue.key)));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.params.dim()
    }

    pub fn index_of(&self, key: UeKey) -> Option<usize> {
        self.ues.iter().position(|u| u.key == key)
    }

    /// Mean power gain E|h_ij|² per antenna of the link from BS `bs` to UE `ue`.
    pub fn link_gain(&self, ue: usize, bs: usize) -> f64 {
        let site = &self.ues[ue];
        let d = site.position.distance(&self.bs_positions[bs]).max(self.params.min_distance_km);
        let pl = 128.1 + 37.6 * d.log10();
        db_to_linear(-pl + self.params.antenna_gain_db + site.shadowing_db[bs])
    }
}

/// Which sampling phase a channel draw belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelStream {
    /// SAA samples used for slot-level decisions.
    Slot,
    /// Channels sensed at the start of each minislot.
    Minislot,
    /// Fresh samples used to validate restored slot decisions.
    Validation,
}

impl ChannelStream {
    fn domain(self) -> Domain {
        match self {
            ChannelStream::Slot => Domain::SlotSample,
            ChannelStream::Minislot => Domain::Minislot,
            ChannelStream::Validation => Domain::Validation,
        }
    }
}

/// Stacked channel vectors `h_i ∈ C^{JK}` for every UE of a topology, in
/// topology order, for one sample or minislot.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSet {
    pub stream: ChannelStream,
    pub index: u64,
    pub h: Vec<CVector>,
}

pub fn sample_channels(topology: &Topology, stream: ChannelStream, index: u64) -> ChannelSet {
    let k = topology.params.antennas_per_bs;
    let dim = topology.dim();
    let h = topology
        .ues
        .iter()
        .enumerate()
        .map(|(u, site)| {
            let mut rng = substream(topology.seed, stream.domain(), index, site.key.stream_group(), site.key.ue as u32);
            let mut v = CVector::zeros(dim);
            for bs in 0..topology.params.num_bs {
                let amp = (topology.link_gain(u, bs) / 2.0).sqrt();
                for a in 0..k {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    v[bs * k + a] = C64::new(amp * re, amp * im);
                }
            }
            v
        })
        .collect();
    ChannelSet { stream, index, h }
}

/// `|hᴴw|² / (φ·σ²)`. Accepts φ = 1 (perfect CSI) even though topologies
/// require φ > 1.
pub fn received_snr(h: &CVector, w: &CVector, snr_loss: f64, noise_power: f64) -> Result<f64> {
    if h.len() != w.len() {
        return Err(domain(format!("channel length {} differs from beamformer length {}", h.len(), w.len())));
    }
    if !(noise_power > 0.0) || !(snr_loss >= 1.0) {
        return Err(domain("noise power must be positive and φ at least 1"));
    }
    Ok(h.dotc(w).norm_sqr() / (snr_loss * noise_power))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn path_loss_reference_points() {
        assert_relative_eq!(path_loss_db(1.0).unwrap(), 128.1);
        assert_relative_eq!(path_loss_db(0.1).unwrap(), 90.5, epsilon = 1e-12);
        assert!(path_loss_db(0.0).is_err());
        assert!(path_loss_db(-1.0).is_err());
    }

    #[test]
    fn base_stations_are_equidistant_on_the_boundary() {
        let p = TopologyParams::default();
        let bs = bs_ring(&p);
        for b in &bs {
            assert_relative_eq!(b.norm(), 0.5, epsilon = 1e-12);
        }
        let d01 = bs[0].distance(&bs[1]);
        assert_relative_eq!(bs[1].distance(&bs[2]), d01, epsilon = 1e-12);
        assert_relative_eq!(bs[2].distance(&bs[0]), d01, epsilon = 1e-12);
    }

    #[test]
    fn scalar_snr_cases() {
        let h = CVector::from_element(1, C64::new(1.0, 0.0));
        let w = CVector::from_element(1, C64::new(2.0, 0.0));
        assert_relative_eq!(received_snr(&h, &w, 1.0, 1.0).unwrap(), 4.0);
        assert_relative_eq!(received_snr(&h, &w, 2.0, 1.0).unwrap(), 2.0);
        assert!(received_snr(&h, &w, 2.0, 0.0).is_err());
        assert!(received_snr(&h, &w, 0.5, 1.0).is_err());
    }
}
