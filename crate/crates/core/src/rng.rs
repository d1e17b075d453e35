//! Counter-based random streams keyed by point coordinates.
//!
//! A displacement is a pure function of `(seed, point, stream)`. The point is
//! encoded by the raw bits of its coordinates (with `-0.0` folded onto `0.0`),
//! which is the same information as its 17-significant-digit decimal form.
//! The key seeds a ChaCha8 block cipher, so the value drawn for a point never
//! depends on which other points were enumerated alongside it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream identifiers. Distinct streams of the same point are independent.
pub mod stream {
    pub const DISPLACEMENT: u64 = 0;
    pub const SHELL_FRESH: u64 = 1;
    pub const DIRECTION: u64 = 2;
    pub const LATTICE_FIELD: u64 = 3;
    pub const GLOBAL: u64 = 4;
    pub const SHELL_AUX: u64 = 5;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn canonical_bits(x: f64) -> u64 {
    if x == 0.0 {
        0
    } else {
        x.to_bits()
    }
}

/// Two independent 64-bit digests of a coordinate vector.
pub fn point_key(coords: &[f64]) -> (u64, u64) {
    let mut a = 0x243f_6a88_85a3_08d3_u64 ^ coords.len() as u64;
    let mut b = 0x1319_8a2e_0370_7344_u64 ^ (coords.len() as u64).rotate_left(32);
    for &x in coords {
        let bits = canonical_bits(x);
        a = splitmix64(a ^ bits);
        b = splitmix64(b.rotate_left(17) ^ bits.wrapping_mul(0xa076_1d64_78bd_642f));
    }
    (a, b)
}

/// Same as [`point_key`] for integer labels (lattice coordinates).
pub fn label_key(label: &[i64]) -> (u64, u64) {
    let mut a = 0xa409_3822_299f_31d0_u64 ^ label.len() as u64;
    let mut b = 0x082e_fa98_ec4e_6c89_u64;
    for &m in label {
        a = splitmix64(a ^ m as u64);
        b = splitmix64(b.rotate_left(23) ^ (m as u64).wrapping_mul(0xe703_7ed1_a0b4_28db));
    }
    (a, b)
}

fn keyed(seed: u64, key: (u64, u64), stream: u64) -> StreamRng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&key.0.to_le_bytes());
    bytes[16..24].copy_from_slice(&key.1.to_le_bytes());
    bytes[24..].copy_from_slice(&splitmix64(stream ^ 0x5851_f42d_4c95_7f2d).to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

pub fn point_rng(seed: u64, coords: &[f64], stream: u64) -> StreamRng {
    keyed(seed, point_key(coords), stream)
}

pub fn label_rng(seed: u64, label: &[i64], stream: u64) -> StreamRng {
    keyed(seed, label_key(label), stream)
}

/// A generator that is not tied to any point (window shifts, sequences).
pub fn global_rng(seed: u64, stream: u64) -> StreamRng {
    keyed(seed, (stream, !stream), stream::GLOBAL)
}

/// Seed of the `index`-th realization derived from a base seed.
pub fn realization_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}
