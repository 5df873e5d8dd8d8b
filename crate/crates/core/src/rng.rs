//! Counter-based random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose key is
//! the tuple `(seed, domain, index, group, member)`. Draws therefore do not
//! depend on the order in which samples, UEs or replications are processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which part of the pipeline a stream feeds. Values are part of the key, so
/// reordering them would change every generated scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Topology = 1,
    SlotSample = 2,
    Minislot = 3,
    Validation = 4,
    Randomization = 5,
    LossSimulation = 6,
    Instance = 7,
}

pub fn substream(seed: u64, domain: Domain, index: u64, group: u32, member: u32) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..28].copy_from_slice(&group.to_le_bytes());
    key[28..32].copy_from_slice(&member.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}
