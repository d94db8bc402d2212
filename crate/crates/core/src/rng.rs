//! Deterministic, order-independent random substreams.
//!
//! Every random draw in a campaign is made from a generator seeded by hashing
//! the run seed together with a path of indices (Fock index, time point,
//! repeat, grid point, ...). Substreams therefore do not depend on the order
//! in which work items are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds an index path into a derived seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(mix(seed), |acc, &idx| mix(acc ^ mix(idx.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn substream(seed: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, path))
}
