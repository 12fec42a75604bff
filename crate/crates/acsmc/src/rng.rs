//! Deterministic random-number substreams.
//!
//! Every stochastic task derives its generator from the run seed and a
//! small key path (iteration, particle, purpose, ...), so results do not
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SmcRng = ChaCha12Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for `seed` alone.
pub fn from_seed(seed: u64) -> SmcRng {
    substream(seed, &[])
}

/// Generator keyed by `seed` and a path of indices.
pub fn substream(seed: u64, key: &[u64]) -> SmcRng {
    let mut state = seed;
    let mut mixed = splitmix64(&mut state);
    for &k in key {
        state ^= k.wrapping_mul(0xD6E8_FEB8_6659_FD93).rotate_left(17);
        mixed ^= splitmix64(&mut state);
        state = state.wrapping_add(mixed);
    }
    let mut bytes = [0u8; 32];
    let mut s = mixed;
    for chunk in bytes.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha12Rng::from_seed(bytes)
}
