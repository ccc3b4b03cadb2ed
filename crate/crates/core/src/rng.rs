//! Reproducible random streams.
//!
//! Every stochastic quantity in the crate is drawn from a
//! [`Xoshiro256PlusPlus`] generator. Streams are addressed by a chain of
//! 64-bit keys (master seed, replicate index, step index, ...) that are
//! folded together with the SplitMix64 finalizer, so a stream depends only
//! on its address and never on how many other streams were consumed before
//! it or on which thread it runs. Gaussian draws use the ziggurat sampler of
//! `rand_distr::StandardNormal`; both algorithms are fixed by `Cargo.lock`,
//! which makes outputs bit-reproducible for a given build.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

/// The generator used throughout the crate.
pub type SimRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the key of child stream `index` below `parent`.
#[inline]
pub fn derive(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent) ^ index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA))
}

/// Generator for stream `index` below `parent`.
pub fn stream(parent: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive(parent, index))
}

/// Stream labels that keep the independent pipelines of one experiment apart.
pub mod tag {
    pub const SPDE: u64 = 0x5344_4531;
    pub const DUAL: u64 = 0x4455_414C;
    pub const COUNTS: u64 = 0x434E_5453;
    pub const SINGLE: u64 = 0x534E_474C;
    pub const LOCAL_TIME: u64 = 0x4C4F_4354;
}

#[inline]
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Exponential variate with the given rate; `+inf` for a zero rate.
#[inline]
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    if rate <= 0.0 {
        return f64::INFINITY;
    }
    // 1 - U lies in (0, 1], so the log is finite.
    let u: f64 = rng.random();
    -(1.0 - u).ln() / rate
}
