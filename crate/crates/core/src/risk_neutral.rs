//! Risk-neutral reference values obtained by exhaustive linear solves.
//!
//! These are the small-θ limits of the risk-sensitive criteria and serve as
//! consistency checks for the discounted and average-cost solvers.

use crate::error::{check_positive, Error, Result};
use crate::linalg;
use crate::model::CtmdpModel;
use crate::policy_iter::{enumerate_policies, ENUMERATION_LIMIT};

/// Expected discounted cost `E_i ∫ e^{-αt} c dt` of a stationary policy,
/// from `(αI − Λᵘ) v = c_u`.
pub fn discounted_policy_value(
    model: &CtmdpModel,
    policy: &[usize],
    alpha: f64,
) -> Result<Vec<f64>> {
    check_positive("alpha", alpha)?;
    model.check_policy(policy)?;
    let n = model.n();
    let gen = model.generator(policy);
    let a = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        alpha - gen[i][j]
                    } else {
                        -gen[i][j]
                    }
                })
                .collect()
        })
        .collect();
    let b = policy
        .iter()
        .enumerate()
        .map(|(i, &u)| model.cost(i, u))
        .collect();
    linalg::solve(a, b).ok_or_else(|| Error::NonFinite {
        location: "singular discounted system".into(),
    })
}

/// Optimal risk-neutral discounted value: the statewise minimum over all
/// stationary policies.
pub fn discounted_optimal_value(model: &CtmdpModel, alpha: f64) -> Result<Vec<f64>> {
    let count = model.policy_count();
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut best = vec![f64::INFINITY; model.n()];
    for policy in enumerate_policies(model) {
        let v = discounted_policy_value(model, &policy, alpha)?;
        for (b, x) in best.iter_mut().zip(v) {
            *b = b.min(x);
        }
    }
    Ok(best)
}

/// Long-run average cost `Σ_i π(i) c(i, u(i))` of an irreducible policy.
pub fn average_policy_cost(model: &CtmdpModel, policy: &[usize]) -> Result<f64> {
    model.check_policy(policy)?;
    if !model.is_irreducible_under(policy) {
        return Err(Error::Reducible {
            policy: policy.to_vec(),
        });
    }
    let pi = linalg::stationary_distribution(&model.generator(policy)).ok_or_else(|| {
        Error::NonFinite {
            location: "singular stationary system".into(),
        }
    })?;
    Ok(pi
        .iter()
        .zip(policy.iter().enumerate())
        .map(|(p, (i, &u))| p * model.cost(i, u))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn constant_cost_discounted() {
        let v =
            discounted_policy_value(&instances::two_state_symmetric(3.0), &[0, 0], 2.0).unwrap();
        assert!(v.iter().all(|x| (x - 1.5).abs() < 1e-14));
    }

    #[test]
    fn desk_average_costs() {
        // Policy (a, a): symmetric unit rates, π = (1/2, 1/2), cost 2 in state 0.
        let m = instances::desk_m2();
        assert!((average_policy_cost(&m, &[0, 0]).unwrap() - 1.0).abs() < 1e-14);
        // Policy (b, a): π = (1/3, 2/3), cost 1 in state 0.
        assert!((average_policy_cost(&m, &[1, 0]).unwrap() - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn optimal_discounted_is_statewise_min() {
        let m = instances::desk_m2();
        let best = discounted_optimal_value(&m, 1.0).unwrap();
        for p in [[0, 0], [1, 0]] {
            let v = discounted_policy_value(&m, &p, 1.0).unwrap();
            assert!(best.iter().zip(&v).all(|(b, x)| b <= x));
        }
    }
}
