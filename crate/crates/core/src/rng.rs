//! Seeding and stream splitting.
//!
//! Every random draw in the crate comes from a [`ChaCha8Rng`] obtained through
//! [`stream`]. The scheme is:
//!
//! * the 256-bit ChaCha key is expanded from the `u64` seed with
//!   `SeedableRng::seed_from_u64` (PCG32 expansion, platform independent);
//! * the 64-bit ChaCha stream id is `domain << 48 | index`, so each
//!   (domain, index) pair reads a disjoint keystream of the same key.
//!
//! Child seeds (trial seeds, per-strategy seeds, per-print optimizer seeds) are
//! produced by [`derive`], a SplitMix64 finalizer over `(seed, domain, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Keystream namespaces. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u16)]
pub enum Domain {
    ClusterCenters = 1,
    User = 2,
    Impression = 11,
    Generator = 3,
    Calibration = 4,
    Optimizer = 5,
    RandomGenomes = 6,
    Trial = 7,
    Strategy = 8,
    Print = 9,
    Holdout = 10,
}

const INDEX_BITS: u32 = 48;

pub fn stream(seed: u64, domain: Domain, index: u64) -> Rng {
    debug_assert!(index < (1 << INDEX_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << INDEX_BITS) | (index & ((1 << INDEX_BITS) - 1)));
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ ((domain as u64) << INDEX_BITS)) ^ index)
}
