//! Deterministic seed derivation and complex Gaussian sampling.
//!
//! Streams are split by hashing (seed, stream) through SplitMix64-style
//! mixing, so changing one stream index never reshuffles another stream's
//! draws. All consumers draw from counter-based ChaCha12 generators seeded by
//! the derived value.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for an independent stream of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(seed ^ mix(stream.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Deterministic generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(derive_seed(seed, stream))
}

/// One circularly-symmetric complex Gaussian draw with the given mean and
/// total variance (variance/2 per real component).
pub fn complex_gaussian(rng: &mut ChaCha12Rng, mean: Complex64, variance: f64) -> Complex64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    mean + Complex64::new(scale * re, scale * im)
}

/// Vector of i.i.d. complex Gaussian draws.
pub fn complex_gaussian_vec(
    rng: &mut ChaCha12Rng,
    len: usize,
    mean: Complex64,
    variance: f64,
) -> Vec<Complex64> {
    (0..len).map(|_| complex_gaussian(rng, mean, variance)).collect()
}
