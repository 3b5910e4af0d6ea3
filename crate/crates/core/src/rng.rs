//! Per-environment random streams.
//!
//! Every environment row owns an independent ChaCha8 stream keyed by
//! `(seed, purpose, row)`. Rows only ever draw from their own stream, so the
//! numbers a row sees do not depend on how rows are scheduled over threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purposes keep streams for the same row disjoint across subsystems.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    Dynamics = 1,
    Task = 2,
    Policy = 3,
    Bench = 4,
    Shuffle = 5,
    Init = 6,
}

pub fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for one stream.
pub fn derive_seed(seed: u64, kind: StreamKind, index: u64) -> u64 {
    mix64(seed ^ mix64((kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ mix64(index.wrapping_add(1))))
}

pub fn stream(seed: u64, kind: StreamKind, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, kind, index))
}

/// One stream per row.
pub fn row_streams(seed: u64, kind: StreamKind, n: usize) -> Vec<ChaCha8Rng> {
    (0..n as u64).map(|i| stream(seed, kind, i)).collect()
}
