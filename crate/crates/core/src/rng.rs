//! Deterministic random substreams.
//!
//! Every parallel unit of work (a trial block, a trajectory, a matching batch)
//! owns a ChaCha stream keyed by the base seed and its position in the
//! experiment, so results do not depend on thread count or scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of indices into a single 64-bit key.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &k| splitmix64(acc ^ splitmix64(k)))
}

/// A generator for the substream at `path` under `base`.
pub fn substream(base: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, path))
}

/// Stream labels, kept distinct so unrelated draws never share a key.
pub(crate) mod tag {
    pub const CHANNEL_MC: u64 = 0x4348_414e;
    pub const RHO: u64 = 0x5248_4f00;
    pub const SWEEP: u64 = 0x5357_4550;
    pub const FIXED_GEOMETRY: u64 = 0x4745_4f4d;
    pub const BOUND: u64 = 0x424f_554e;
}
