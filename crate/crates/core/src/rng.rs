//! Counter-based randomness.
//!
//! Every random decision is addressed by a key (seed, domain, indices) and
//! drawn from its own ChaCha8 stream, so results do not depend on the order
//! in which cells, levels or frames are visited.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Fragment = 1,
    FrameJitter = 2,
}

/// Packs a domain tag and up to three indices into a ChaCha stream id.
///
/// Layout: 4 bits domain | 12 bits `a` | 24 bits `b` | 24 bits `c`.
pub fn stream_id(domain: Domain, a: u64, b: u64, c: u64) -> u64 {
    debug_assert!(a < 1 << 12 && b < 1 << 24 && c < 1 << 24);
    ((domain as u64) << 60) | ((a & 0xfff) << 48) | ((b & 0xff_ffff) << 24) | (c & 0xff_ffff)
}

/// A short sequence of 64-bit words owned by one key.
pub struct KeyedStream(ChaCha8Rng);

impl KeyedStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        KeyedStream(rng)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Next value mapped onto `0..n` (`n >= 1`).
    pub fn below(&mut self, n: u64) -> u64 {
        scale_below(self.next_u64(), n)
    }
}

/// Maps a uniform word onto `0..n` by multiply-shift.
///
/// Monotone in `word`, so one word reused across ranges lands at the same
/// relative position in each. Bias is at most `n / 2^64`.
pub fn scale_below(word: u64, n: u64) -> u64 {
    debug_assert!(n >= 1);
    ((word as u128 * n as u128) >> 64) as u64
}
