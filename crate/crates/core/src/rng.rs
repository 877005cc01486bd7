//! Counter-based random substreams.
//!
//! Every stochastic routine derives its generator from a master seed and an
//! index path (replication, draw, grid point, ...), so a given stream is
//! reproducible regardless of how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a master seed with an index path into a single 64-bit key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix(seed), |acc, &idx| {
        splitmix(acc ^ splitmix(idx.wrapping_add(GOLDEN)))
    })
}

/// Independent generator for the stream identified by `(seed, path)`.
pub fn substream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, path));
    rng.set_stream(path.first().copied().unwrap_or(0));
    rng
}
