//! Two-timescale RAN slicing for multicast eMBB and bursty URLLC traffic
//! under coordinated multipoint beamforming.
//!
//! * [`channel`]: topology, path loss and Rayleigh channel samples.
//! * [`phy`]: rates, finite-blocklength channel uses, bandwidth reservation
//!   and the slice utilities.
//! * [`queueing`]: blocking in the URLLC loss system.
//! * [`solver`]: the relaxed beamforming/bandwidth subproblem.
//! * [`slicing`]: slot admission, resource masks and minislot scheduling.
//! * [`harness`]: scenario files, sweeps and CSV reports.

pub mod channel;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod phy;
pub mod queueing;
pub mod rng;
pub mod slicing;
pub mod solver;

pub use error::{Error, Result};
