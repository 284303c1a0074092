//! Counter-keyed random streams.
//!
//! Every random draw in a run is taken from a ChaCha stream keyed by
//! `(seed, domain, a, b)` (typically `a` = iteration, `b` = agent or edge id),
//! so any draw can be replayed in isolation and out of order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Domain tags separating independent uses of the same seed.
pub mod domain {
    pub const EDGE_SELECT: u64 = 0x6564_6765;
    pub const COORD_MASK: u64 = 0x6d61_736b;
    pub const GRAD_NOISE: u64 = 0x6e6f_6973;
    pub const ASYNC_MASK: u64 = 0x6173_796e;
    pub const INIT: u64 = 0x696e_6974;
    pub const SUITE: u64 = 0x7375_6974;
    pub const SCHEDULER: u64 = 0x7363_6864;
    pub const SPECTRAL: u64 = 0x7370_6563;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit sub-seed from a master seed and a label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    let mut s = seed ^ label.rotate_left(17);
    splitmix64(&mut s);
    splitmix64(&mut s)
}

pub fn stream(seed: u64, domain: u64, a: u64, b: u64) -> StreamRng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let words = [
        splitmix64(&mut state) ^ domain,
        splitmix64(&mut state) ^ a,
        splitmix64(&mut state) ^ b.rotate_left(32),
        splitmix64(&mut state),
    ];
    // second mixing round so nearby (a, b) pairs do not share key bytes
    let mut mix = words[0] ^ words[1].rotate_left(21) ^ words[2].rotate_left(42) ^ words[3];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        let v = w ^ splitmix64(&mut mix);
        chunk.copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
