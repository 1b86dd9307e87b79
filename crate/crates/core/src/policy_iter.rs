//! Policy improvement for the risk-sensitive average cost.
//!
//! Starting from any stationary policy, evaluate `(ρᵘ, hᵘ)` from the
//! multiplicative Poisson equation, then switch every state to the
//! minimizer of `θ c(i, u) hᵘ(i) + Σ_j λ_ij(u) hᵘ(j)`. On a finite model the
//! growth rate strictly decreases until the policy repeats, and the final
//! pair solves
//!
//! ```text
//! θ ρ* h(i) = min_u [θ c(i, u) h(i) + Σ_j λ_ij(u) h(j)].
//! ```

use rayon::prelude::*;
use serde::Serialize;

use crate::avg_eigen::{
    check_lyapunov, evaluate_policy, poisson_residual, LyapunovCertificate, StationaryPolicy,
};
use crate::error::{check_theta, Error, Result};
use crate::model::CtmdpModel;

/// Largest number of stationary policies the enumeration oracle accepts.
pub const ENUMERATION_LIMIT: u128 = 1_000_000;
/// Relative tolerance of the statewise optimality certificate.
pub const OPTIMALITY_TOLERANCE: f64 = 1e-10;
/// Required decrease of ρ between consecutive distinct policies.
pub const STRICT_DECREASE: f64 = 1e-12;
/// Allowed increase of ρ before the eigen solver is presumed broken.
pub const INCREASE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct TraceEntry {
    pub policy: StationaryPolicy,
    pub rho: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AverageSolution {
    pub theta: f64,
    pub rho_star: f64,
    pub policy: StationaryPolicy,
    pub h: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub acdpe_residual: f64,
    pub poisson_residual: f64,
    pub warnings: Vec<String>,
}

fn check_positive_vector(h: &[f64], n: usize) -> Result<()> {
    if h.len() != n {
        return Err(Error::Dimension(format!(
            "h has length {}, n = {n}",
            h.len()
        )));
    }
    if h.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter(
            "h must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Statewise minimizer of `θ c(i, u) h(i) + Σ_j λ_ij(u) h(j)`, lowest index
/// on ties.
pub fn improve(model: &CtmdpModel, theta: f64, h: &[f64]) -> Result<StationaryPolicy> {
    check_positive_vector(h, model.n())?;
    Ok(StationaryPolicy(
        (0..model.n())
            .map(|i| model.min_action_value(i, theta, h).1)
            .collect(),
    ))
}

/// `max_i |θ ρ h(i) − min_u [θ c(i, u) h(i) + Σ_j λ_ij(u) h(j)]|`.
pub fn acdpe_residual(model: &CtmdpModel, theta: f64, rho: f64, h: &[f64]) -> f64 {
    (0..model.n())
        .map(|i| (theta * rho * h[i] - model.min_action_value(i, theta, h).0).abs())
        .fold(0.0, f64::max)
}

/// True when no state can improve on its current action by more than the
/// relative tolerance.
fn statewise_optimal(model: &CtmdpModel, theta: f64, policy: &[usize], h: &[f64]) -> bool {
    policy.iter().enumerate().all(|(i, &a)| {
        let current = model.action_value(i, a, theta, h);
        let best = model.min_action_value(i, theta, h).0;
        let scale: f64 = 1.0
            + theta * model.cost(i, a) * h[i]
            + model
                .rates(i, a)
                .iter()
                .zip(h)
                .map(|(r, x)| (r * x).abs())
                .sum::<f64>();
        current - best <= OPTIMALITY_TOLERANCE * scale
    })
}

pub fn policy_iteration(
    model: &CtmdpModel,
    theta: f64,
    initial: &StationaryPolicy,
) -> Result<AverageSolution> {
    policy_iteration_with_certificate(model, theta, initial, None)
}

/// Policy iteration; when a drift certificate is given, its `θ‖c‖ < δ`
/// hypothesis is checked and a warning recorded if it fails (the finite
/// model is solved regardless).
pub fn policy_iteration_with_certificate(
    model: &CtmdpModel,
    theta: f64,
    initial: &StationaryPolicy,
    certificate: Option<&LyapunovCertificate>,
) -> Result<AverageSolution> {
    check_theta(theta)?;
    model.check_policy(initial)?;

    let mut warnings = Vec::new();
    if let Some(cert) = certificate {
        let report = check_lyapunov(model, cert, Some(theta))?;
        if report.theta_cost_below_delta == Some(false) {
            warnings.push(format!(
                "theta * ||c|| = {} is not below the drift constant delta = {}; \
                 the existence argument for an optimal stationary control assumes it",
                theta * model.cost_sup(),
                cert.delta
            ));
        }
        if !report.holds {
            warnings.push(format!(
                "drift certificate fails with minimum margin {}",
                report.min_margin
            ));
        }
    }

    let cap = usize::try_from(model.policy_count()).unwrap_or(usize::MAX);
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut current = initial.clone();
    loop {
        let eval = evaluate_policy(model, &current, theta)?;
        if let Some(last) = trace.last() {
            let iteration = trace.len();
            if eval.rho > last.rho + INCREASE_TOLERANCE {
                return Err(Error::RhoIncreased {
                    iteration,
                    prev: last.rho,
                    next: eval.rho,
                });
            }
            if last.rho - eval.rho <= STRICT_DECREASE {
                return Err(Error::StalledImprovement {
                    iteration,
                    decrease: last.rho - eval.rho,
                });
            }
        }
        trace.push(TraceEntry {
            policy: current.clone(),
            rho: eval.rho,
        });
        if trace.len() > cap {
            return Err(Error::IterationCap { cap });
        }

        let candidate = improve(model, theta, &eval.h)?;
        if candidate == current || statewise_optimal(model, theta, &current, &eval.h) {
            return Ok(AverageSolution {
                theta,
                rho_star: eval.rho,
                acdpe_residual: acdpe_residual(model, theta, eval.rho, &eval.h),
                poisson_residual: poisson_residual(model, &current, theta, &eval),
                policy: current,
                h: eval.h,
                trace,
                warnings,
            });
        }
        current = candidate;
    }
}

/// All stationary policies in lexicographic order (state 0 most
/// significant).
pub fn enumerate_policies(model: &CtmdpModel) -> impl Iterator<Item = Vec<usize>> + '_ {
    let n = model.n();
    let mut next = Some(vec![0usize; n]);
    std::iter::from_fn(move || {
        let out = next.take()?;
        let mut succ = out.clone();
        for i in (0..n).rev() {
            succ[i] += 1;
            if succ[i] < model.num_actions(i) {
                next = Some(succ);
                break;
            }
            succ[i] = 0;
        }
        Some(out)
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BruteForceResult {
    pub theta: f64,
    pub rho_star: f64,
    pub policy: StationaryPolicy,
    /// Every irreducible policy with its growth rate, in enumeration order.
    pub table: Vec<TraceEntry>,
    /// Reducible policies, which have no Perron evaluation.
    pub skipped: Vec<StationaryPolicy>,
}

/// Evaluates every stationary policy and returns the minimum growth rate;
/// ties go to the lexicographically smallest policy.
pub fn brute_force_average(model: &CtmdpModel, theta: f64) -> Result<BruteForceResult> {
    check_theta(theta)?;
    let count = model.policy_count();
    if count > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let policies: Vec<Vec<usize>> = enumerate_policies(model).collect();
    let evaluated: Vec<Result<Option<f64>>> = policies
        .par_iter()
        .map(|p| match evaluate_policy(model, p, theta) {
            Ok(e) => Ok(Some(e.rho)),
            Err(Error::Reducible { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();

    let mut table = Vec::new();
    let mut skipped = Vec::new();
    for (p, r) in policies.into_iter().zip(evaluated) {
        match r? {
            Some(rho) => table.push(TraceEntry {
                policy: StationaryPolicy(p),
                rho,
            }),
            None => skipped.push(StationaryPolicy(p)),
        }
    }
    let best = table
        .iter()
        .min_by(|a, b| {
            a.rho
                .total_cmp(&b.rho)
                .then_with(|| a.policy.cmp(&b.policy))
        })
        .ok_or_else(|| Error::Reducible { policy: Vec::new() })?
        .clone();
    Ok(BruteForceResult {
        theta,
        rho_star: best.rho,
        policy: best.policy,
        table,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn enumeration_order() {
        let m = instances::desk_m2();
        let all: Vec<_> = enumerate_policies(&m).collect();
        assert_eq!(all, vec![vec![0, 0], vec![1, 0]]);
        let single = instances::single_state(1.0, 0.0);
        assert_eq!(enumerate_policies(&single).count(), 1);
    }

    #[test]
    fn unit_h_picks_cheapest_action() {
        let m = CtmdpModel::builder(2)
            .action(0, "x", 3.0, &[(1, 1.0)])
            .action(0, "y", 1.0, &[(1, 5.0)])
            .action(0, "z", 2.0, &[(1, 0.5)])
            .action(1, "x", 0.0, &[(0, 1.0)])
            .build()
            .unwrap();
        assert_eq!(improve(&m, 0.5, &[1.0, 1.0]).unwrap().0, vec![1, 0]);
        assert!(improve(&m, 0.5, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn single_action_model_terminates_immediately() {
        let m = instances::two_state_symmetric(1.7);
        let sol = policy_iteration(&m, 0.5, &StationaryPolicy::first(&m)).unwrap();
        assert_eq!(sol.trace.len(), 1);
        assert!((sol.rho_star - 1.7).abs() < 1e-10);
    }

    #[test]
    fn desk_model_matches_brute_force() {
        let m = instances::desk_m2();
        let pi = policy_iteration(&m, 0.5, &StationaryPolicy(vec![0, 0])).unwrap();
        let bf = brute_force_average(&m, 0.5).unwrap();
        assert_eq!(bf.table.len(), 2);
        assert!((pi.rho_star - bf.rho_star).abs() <= 1e-8);
        assert_eq!(pi.policy, bf.policy);
        assert_eq!(pi.policy.0, vec![1, 0]);
        assert!(pi.acdpe_residual <= 1e-8);
        assert!(pi.poisson_residual <= 1e-8);
    }

    #[test]
    fn constant_cost_brute_force_table() {
        let m = CtmdpModel::builder(2)
            .action(0, "a", 1.5, &[(1, 1.0)])
            .action(0, "b", 1.5, &[(1, 3.0)])
            .action(1, "a", 1.5, &[(0, 2.0)])
            .action(1, "b", 1.5, &[(0, 0.5)])
            .build()
            .unwrap();
        let bf = brute_force_average(&m, 0.5).unwrap();
        assert_eq!(bf.table.len(), 4);
        assert!(bf.table.iter().all(|e| (e.rho - 1.5).abs() < 1e-10));
        let pi = policy_iteration(&m, 0.5, &StationaryPolicy(vec![1, 1])).unwrap();
        assert!(pi.trace.len() <= 2);
        assert!((pi.rho_star - 1.5).abs() < 1e-10);
        assert!(acdpe_residual(&m, 0.5, 1.5, &[1.0, 1.0]) < 1e-15);
    }

    #[test]
    fn reducible_policies_are_skipped_by_brute_force() {
        let m = CtmdpModel::builder(2)
            .action(0, "go", 1.0, &[(1, 1.0)])
            .action(1, "back", 0.5, &[(0, 1.0)])
            .action(1, "stay", 0.0, &[])
            .build()
            .unwrap();
        let bf = brute_force_average(&m, 0.5).unwrap();
        assert_eq!(bf.table.len(), 1);
        assert_eq!(bf.skipped, vec![StationaryPolicy(vec![0, 1])]);
        assert!(matches!(
            policy_iteration(&m, 0.5, &StationaryPolicy(vec![0, 1])).unwrap_err(),
            Error::Reducible { .. }
        ));
    }

    #[test]
    fn certificate_hypothesis_warning() {
        let m = instances::desk_m2();
        let cert = crate::avg_eigen::search_certificate(&m, &[3.0]).unwrap();
        // θ‖c‖ = 0.9 * 2 = 1.8 > δ ≈ 0.95.
        let sol =
            policy_iteration_with_certificate(&m, 0.9, &StationaryPolicy(vec![0, 0]), Some(&cert))
                .unwrap();
        assert!(sol.warnings.iter().any(|w| w.contains("delta")));
        let quiet =
            policy_iteration_with_certificate(&m, 0.4, &StationaryPolicy(vec![0, 0]), Some(&cert))
                .unwrap();
        assert!(quiet.warnings.is_empty());
    }
}
