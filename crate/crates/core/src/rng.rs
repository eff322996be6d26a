//! Seeded random streams. Every random draw in the crate goes through
//! `stream(seed, tag)` so results are reproducible and independent per use.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type SimRng = ChaCha8Rng;

pub mod tag {
    pub const TARGETS: u64 = 1;
    pub const USER: u64 = 2;
    pub const DIRECT_SI: u64 = 3;
    pub const DATA: u64 = 4;
    pub const NOISE_NODE: u64 = 5;
    pub const NOISE_USER: u64 = 6;
    pub const CALIBRATION: u64 = 7;
    pub const SWEEP: u64 = 8;
}

pub fn stream(seed: u64, tag: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng
}

/// Independent stream for the `index`-th instance of a tagged use (one per
/// RX chain, per sweep beam, ...).
pub fn substream(seed: u64, tag: u64, index: u64) -> SimRng {
    stream(seed, tag | ((index + 1) << 16))
}

/// Circularly-symmetric complex Gaussian with unit variance.
#[inline]
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}
