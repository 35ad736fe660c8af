//! Seed derivation and independent random streams.
//!
//! Every generator takes a plain `u64` seed. A problem's root seed is split
//! into one ChaCha stream per component (signal, matrix, noise, covariance),
//! so any component can be regenerated without touching the others. Trial
//! seeds inside sweeps are derived from `(root, cell, trial)` by hashing, which
//! makes results independent of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies an independent random stream drawn from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Signal = 1,
    Matrix = 2,
    Noise = 3,
    Covariance = 4,
}

/// Returns a generator for `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a root seed with a path of indices into a new, well-spread seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
