//! Seeded random number streams.
//!
//! All randomness in the crate flows from a single master seed. Independent
//! work units (bootstrap draws, Monte Carlo replications) each get their own
//! ChaCha stream derived from the master seed and the unit index, so results
//! do not depend on execution order or thread count.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::numkit::normal::normal_quantile;

pub type Rng = ChaCha8Rng;

/// Root stream for a master seed.
pub fn master_rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent child stream for work unit `index`.
pub fn child_rng(seed: u64, index: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Uniform draw strictly inside (0,1).
pub fn uniform_open01(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
}

/// Standard normal draw by inverse-CDF sampling.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    normal_quantile(uniform_open01(rng)).expect("uniform_open01 is strictly interior")
}

/// Standard exponential draw (mean 1).
pub fn standard_exponential(rng: &mut impl RngCore) -> f64 {
    -uniform_open01(rng).ln()
}
