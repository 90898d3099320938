//! Counter-keyed random streams.
//!
//! Every draw site gets its own ChaCha stream keyed by `(seed, tag, a, b)`,
//! so results never depend on iteration order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes; keeps streams for different consumers disjoint.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum StreamTag {
    Split = 1,
    CoordinateNoise = 2,
    ValueNoise = 3,
    Germ = 4,
    CpInit = 5,
    Location = 6,
    Test = 7,
}

pub fn stream(seed: u64, tag: StreamTag, a: u64, b: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(tag as u64).to_le_bytes());
    key[16..24].copy_from_slice(&a.to_le_bytes());
    key[24..32].copy_from_slice(&b.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Order-independent key for a list of small integers (used for group-keyed streams).
pub fn key_of(values: &[usize]) -> u64 {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for byte in (*v as u64).to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}
