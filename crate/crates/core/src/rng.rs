//! Counter-based random streams.
//!
//! Every random quantity in a run is addressed by `(seed, stream, index)`
//! and read from a ChaCha8 keystream at a fixed word position, so values do
//! not depend on the order in which they are requested. This is what lets
//! trials run on any number of workers and still be replayed one at a time.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream ids used across the crate. Distinct streams never share keystream.
pub mod stream {
    pub const TRIAL: u64 = 1;
    pub const FRICTION_NODES: u64 = 2;
    pub const SEQUENCE: u64 = 3;
    pub const TRIANGLES: u64 = 4;
    pub const FINITE_SAMPLE: u64 = 5;
}

/// Deterministic 64-bit value at `(seed, stream, index)`.
pub fn split(seed: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}

/// Uniform `[0, 1)` with 53 bits of precision at `(seed, stream, index)`.
pub fn unit(seed: u64, stream: u64, index: u64) -> f64 {
    to_unit(split(seed, stream, index))
}

#[inline]
pub fn to_unit(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A sequential generator for one `(seed, stream, index)` slot.
pub fn stream_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(split(seed, stream, index))
}
