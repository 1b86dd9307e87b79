//! Small reference models and a seeded random instance generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::CtmdpModel;

/// Two-state desk model.
///
/// State 0 offers action `a` (rate 1 to state 1, cost 2) and action `b`
/// (rate 2 to state 1, cost 1); state 1 has the single action `a` (rate 1
/// back to state 0, cost 0). Terminal cost is `g = (1, 0)`.
pub fn desk_m2() -> CtmdpModel {
    CtmdpModel::builder(2)
        .action(0, "a", 2.0, &[(1, 1.0)])
        .action(0, "b", 1.0, &[(1, 2.0)])
        .action(1, "a", 0.0, &[(0, 1.0)])
        .terminal(vec![1.0, 0.0])
        .build()
        .expect("desk model is valid")
}

/// Two states swapping at rate 1 with constant running cost `c0`.
pub fn two_state_symmetric(c0: f64) -> CtmdpModel {
    CtmdpModel::builder(2)
        .action(0, "a", c0, &[(1, 1.0)])
        .action(1, "a", c0, &[(0, 1.0)])
        .build()
        .expect("symmetric model is valid")
}

/// One absorbing state with running cost `c0` and terminal cost `g0`.
pub fn single_state(c0: f64, g0: f64) -> CtmdpModel {
    CtmdpModel::builder(1)
        .action(0, "a", c0, &[])
        .terminal(vec![g0])
        .build()
        .expect("single-state model is valid")
}

/// Shape limits for [`random_irreducible`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpec {
    pub max_states: usize,
    pub max_actions: usize,
    pub max_rate: f64,
    pub max_cost: f64,
    pub max_terminal: f64,
    /// Probability that an off-diagonal rate is nonzero.
    pub density: f64,
}

impl Default for RandomSpec {
    fn default() -> Self {
        Self {
            max_states: 4,
            max_actions: 3,
            max_rate: 2.0,
            max_cost: 2.0,
            max_terminal: 1.0,
            density: 0.7,
        }
    }
}

/// Seeded random model that is irreducible under every stationary policy.
///
/// Candidates are drawn until one passes
/// [`CtmdpModel::irreducible_all`]; the draw sequence depends only on
/// `seed`.
pub fn random_irreducible(seed: u64, spec: RandomSpec) -> CtmdpModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.random_range(2..=spec.max_states.max(2));
        let mut builder = CtmdpModel::builder(n);
        for i in 0..n {
            let k = rng.random_range(1..=spec.max_actions.max(1));
            for a in 0..k {
                let mut rates = Vec::new();
                for j in (0..n).filter(|&j| j != i) {
                    if rng.random_bool(spec.density) {
                        // Keep rates away from zero so the chains mix.
                        rates.push((j, spec.max_rate * rng.random_range(0.05..=1.0)));
                    }
                }
                let cost = spec.max_cost * rng.random::<f64>();
                builder = builder.action(i, &format!("u{a}"), cost, &rates);
            }
        }
        let terminal = (0..n)
            .map(|_| spec.max_terminal * rng.random::<f64>())
            .collect();
        let model = builder
            .terminal(terminal)
            .build()
            .expect("generated model is valid");
        if model.irreducible_all() {
            return model;
        }
    }
}

/// The `count` seeded instances `random_irreducible(base + k, spec)`.
pub fn random_suite(base: u64, count: usize, spec: RandomSpec) -> Vec<CtmdpModel> {
    (0..count as u64)
        .map(|k| random_irreducible(base + k, spec))
        .collect()
}
