//! Counter-based random streams.
//!
//! Every stochastic quantity draws from a ChaCha stream keyed by the master
//! seed, a fixed label and the logical indices of the quantity (trajectory,
//! coordinate, ...). Streams never depend on which worker evaluates them, so
//! results are identical for any thread count.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a 64-bit sub-seed from `seed` and a label, e.g. to hand a
/// component its own master seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut state = seed;
    let mut acc = splitmix64(&mut state);
    for chunk in label.as_bytes().chunks(8) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        state ^= u64::from_le_bytes(buf);
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Independent stream for `(seed, label, indices)`.
pub fn stream(seed: u64, label: &str, indices: &[u64]) -> StreamRng {
    let mut state = derive_seed(seed, label);
    for &i in indices {
        state ^= i.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Uniform draw from the open interval (0, 1).
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
