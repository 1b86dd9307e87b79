//! Fixtures shared by the solver benchmarks.

use riskctmc::instances::{random_irreducible, RandomSpec};
use riskctmc::CtmdpModel;

/// Seeded random model with `n` states and up to three actions each.
pub fn fixture(n: usize, seed: u64) -> CtmdpModel {
    let spec = RandomSpec {
        max_states: n,
        ..RandomSpec::default()
    };
    // The generator draws the state count up to the limit; retry until it hits `n`.
    (seed..)
        .map(|s| random_irreducible(s, spec))
        .find(|m| m.n() == n)
        .expect("some seed reaches the requested size")
}
