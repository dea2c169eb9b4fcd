// SPDX-License-Identifier: MIT OR Apache-2.0

//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 keyed by the user seed, with one stream
//! per independent unit of work (replicate, innovation column, ...). Gaussian
//! variates use the ziggurat sampler of `rand_distr::StandardNormal`, which is
//! platform independent, so a `(seed, stream)` pair always yields the same
//! numbers regardless of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Stream namespaces keep independent consumers of one seed apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Parametric = 1,
    Bootstrap = 2,
    Innovation = 3,
    Factor = 4,
    MonteCarlo = 5,
}

const INDEX_BITS: u32 = 48;

/// Returns the generator for `index` within `domain`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    debug_assert!(index < (1u64 << INDEX_BITS));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((domain as u64) << INDEX_BITS) | index);
    rng
}

/// Derives a child seed, used when one Monte Carlo run needs a whole seed of its own.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = stream(seed, Domain::MonteCarlo, index);
    rng.random()
}

#[inline]
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_gaussian<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}
