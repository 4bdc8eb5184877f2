//! Seeded randomness.
//!
//! Every randomized routine takes an explicit generator. The crate standardizes on
//! ChaCha20 (`rand_chacha::ChaCha20Rng`, a counter-based stream cipher) seeded
//! through [`seeded`], uniform doubles from the top 53 bits of a `u64` draw, and
//! standard normals from the Marsaglia polar method with the spare value
//! discarded. Together these give identical bit streams on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub type SeededRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Uniform draw on `[0, 1)` with 53 bits of precision.
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw on `[lo, hi)`.
pub fn uniform_range<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// Uniform draw on the open interval `(0, 1)`.
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = uniform(rng);
        if u > 0.0 {
            return u;
        }
    }
}

/// Standard normal draw (Marsaglia polar method, spare discarded).
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u = 2.0 * uniform(rng) - 1.0;
        let v = 2.0 * uniform(rng) - 1.0;
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| standard_normal(rng)).collect()
}

/// Random sign, `+1` or `-1` with equal probability.
pub fn sign<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    if rng.next_u64() >> 63 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(master, key, index)`: three chained SplitMix64 rounds.
pub fn derive_seed(master: u64, key: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ key) ^ index)
}

/// 64-bit FNV-1a over raw bytes; used to key grid cells and solver streams.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
