//! Reproducible random streams for parallel Monte Carlo.
//!
//! Each sample owns an independent ChaCha stream derived from the master
//! seed and the sample index, so estimates are bit-identical regardless of
//! worker count or chunk boundaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The stream for one Monte Carlo sample: master seed selects the key,
/// the sample index selects the stream.
pub fn sample_stream(master_seed: u64, sample_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(sample_index);
    rng
}
