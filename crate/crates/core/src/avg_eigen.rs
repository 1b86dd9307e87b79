//! Risk-sensitive average cost of a stationary policy.
//!
//! For a stationary policy `u` the growth rate `ρᵘ` of
//! `E exp(θ ∫₀ᵀ c)` is `μ/θ`, where `μ` is the Perron root of the twisted
//! generator `Λᵘ + θ diag(c_u)`. The positive eigenvector, normalized at the
//! reference state, solves the multiplicative Poisson equation
//!
//! ```text
//! Σ_j λ_ij(u(i)) h(j) + θ c(i, u(i)) h(i) = θ ρᵘ h(i),   h(0) = 1.
//! ```

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::mat_vec;
use crate::model::{strongly_connected, CtmdpModel};

/// Eigenvector 1-norm change that ends power iteration.
pub const EIGEN_TOLERANCE: f64 = 1e-12;
pub const EIGEN_MAX_ITERATIONS: usize = 100_000;

/// An action index per state.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationaryPolicy(pub Vec<usize>);

impl Deref for StationaryPolicy {
    type Target = [usize];

    fn deref(&self) -> &[usize] {
        &self.0
    }
}

impl From<Vec<usize>> for StationaryPolicy {
    fn from(v: Vec<usize>) -> Self {
        Self(v)
    }
}

impl StationaryPolicy {
    /// Action 0 in every state.
    pub fn first(model: &CtmdpModel) -> Self {
        Self(vec![0; model.n()])
    }

    /// Resolves action labels against the model.
    pub fn from_labels(model: &CtmdpModel, labels: &[&str]) -> Result<Self> {
        if labels.len() != model.n() {
            return Err(Error::Dimension(format!(
                "policy has {} labels, n = {}",
                labels.len(),
                model.n()
            )));
        }
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                model
                    .action_index(i, l)
                    .ok_or_else(|| Error::MissingAction {
                        state: i,
                        label: l.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyEvaluation {
    pub theta: f64,
    /// Growth rate `ρᵘ`.
    pub rho: f64,
    /// Perron root `μ = θ ρᵘ` of the twisted generator.
    pub mu: f64,
    /// Positive eigenvector with `h[0] = 1`.
    pub h: Vec<f64>,
    /// `max_i |(A h)_i − μ h_i|`.
    pub residual: f64,
    pub iterations: usize,
}

/// `A = Λᵘ + θ diag(c(·, u(·)))`. Off-diagonal entries are the rates, so
/// `A` is Metzler.
pub fn twisted_generator(model: &CtmdpModel, policy: &[usize], theta: f64) -> Vec<Vec<f64>> {
    policy
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let mut row = model.rates(i, a).to_vec();
            row[i] += theta * model.cost(i, a);
            row
        })
        .collect()
}

fn matrix_irreducible(a: &[Vec<f64>]) -> bool {
    let adj: Vec<Vec<usize>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter(|&(j, &v)| j != i && v > 0.0)
                .map(|(j, _)| j)
                .collect()
        })
        .collect();
    strongly_connected(&adj)
}

/// Perron root and normalized positive eigenvector of an irreducible
/// Metzler matrix by shifted power iteration.
///
/// With `σ = max_i(−A_ii) + 1` the matrix `B = A + σI` is nonnegative,
/// irreducible and has a positive diagonal, hence primitive, so the power
/// sequence `v ← Bv/‖Bv‖₁` converges to the Perron vector.
pub fn principal_eigen(a: &[Vec<f64>], theta: f64) -> Result<PolicyEvaluation> {
    let n = a.len();
    if n == 0 || a.iter().any(|r| r.len() != n) {
        return Err(Error::Dimension(
            "matrix must be square and nonempty".into(),
        ));
    }
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "theta must be positive, got {theta}"
        )));
    }
    if let Some((i, j)) = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .find(|&(i, j)| !a[i][j].is_finite() || (i != j && a[i][j] < 0.0))
    {
        return Err(Error::InvalidParameter(format!(
            "matrix entry ({i}, {j}) = {} is not a finite Metzler entry",
            a[i][j]
        )));
    }
    if !matrix_irreducible(a) {
        return Err(Error::ReducibleMatrix);
    }

    let sigma = (0..n).map(|i| -a[i][i]).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let b: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row = a[i].clone();
            row[i] += sigma;
            row
        })
        .collect();

    let mut v = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    let mut prev_change = f64::INFINITY;
    let mut converged = n == 1;
    while !converged {
        if iterations == EIGEN_MAX_ITERATIONS {
            return Err(Error::EigenNoConvergence {
                iterations,
                change,
                ratio_estimate: change / prev_change,
            });
        }
        let w = mat_vec(&b, &v);
        let total: f64 = w.iter().sum();
        let next: Vec<f64> = w.iter().map(|x| x / total).collect();
        prev_change = change;
        change = next.iter().zip(&v).map(|(x, y)| (x - y).abs()).sum();
        v = next;
        iterations += 1;
        converged = change < EIGEN_TOLERANCE;
    }

    if !(v[0] > 1e-300) {
        return Err(Error::EigenUnderflow { value: v[0] });
    }
    let av = mat_vec(a, &v);
    // Σ(Av)/Σv avoids reintroducing the shift.
    let mu = av.iter().sum::<f64>() / v.iter().sum::<f64>();
    let h: Vec<f64> = v.iter().map(|x| x / v[0]).collect();
    let ah = mat_vec(a, &h);
    let residual = ah
        .iter()
        .zip(&h)
        .map(|(x, y)| (x - mu * y).abs())
        .fold(0.0, f64::max);
    Ok(PolicyEvaluation {
        theta,
        rho: mu / theta,
        mu,
        h,
        residual,
        iterations,
    })
}

/// Evaluates a stationary policy; reducible policies are rejected.
pub fn evaluate_policy(
    model: &CtmdpModel,
    policy: &[usize],
    theta: f64,
) -> Result<PolicyEvaluation> {
    model.check_policy(policy)?;
    if !model.is_irreducible_under(policy) {
        return Err(Error::Reducible {
            policy: policy.to_vec(),
        });
    }
    principal_eigen(&twisted_generator(model, policy, theta), theta)
}

/// `max_i |Σ_j λ_ij(u(i)) h(j) + θ c(i,u(i)) h(i) − θ ρ h(i)|`.
pub fn poisson_residual(
    model: &CtmdpModel,
    policy: &[usize],
    theta: f64,
    eval: &PolicyEvaluation,
) -> f64 {
    policy
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            (model.action_value(i, a, theta, &eval.h) - theta * eval.rho * eval.h[i]).abs()
        })
        .fold(0.0, f64::max)
}

/// Exponential drift certificate: `V ≥ 0`, `drift_weight ≥ 1`, `δ > 0`
/// and `b < ∞` such that for every state and action
/// `e^{−V(i)} Σ_j λ_ij(u) e^{V(j)} ≤ −δ drift_weight(i) + b 1{i = 0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub v: Vec<f64>,
    pub drift_weight: Vec<f64>,
    pub delta: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    /// `lhs[i][a] = Σ_j λ_ij(a) e^{V(j) − V(i)}`.
    pub lhs: Vec<Vec<f64>>,
    /// `margins[i][a]` = right side minus left side.
    pub margins: Vec<Vec<f64>>,
    pub min_margin: f64,
    pub holds: bool,
    /// Whether `θ‖c‖ < δ`, when θ was supplied.
    pub theta_cost_below_delta: Option<bool>,
}

/// Largest exponent passed to `exp` without overflow.
pub const MAX_SAFE_EXPONENT: f64 = 709.0;

/// Evaluates the drift inequality for every `(i, a)`.
pub fn check_lyapunov(
    model: &CtmdpModel,
    cert: &LyapunovCertificate,
    theta: Option<f64>,
) -> Result<LyapunovReport> {
    let n = model.n();
    if cert.v.len() != n || cert.drift_weight.len() != n {
        return Err(Error::Dimension(format!(
            "certificate vectors must have length {n}"
        )));
    }
    if cert.v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidParameter(
            "V must be finite and nonnegative".into(),
        ));
    }
    if cert.drift_weight.iter().any(|x| !x.is_finite() || *x < 1.0) {
        return Err(Error::InvalidParameter("drift weight must be >= 1".into()));
    }
    if !(cert.delta > 0.0 && cert.delta.is_finite() && cert.b.is_finite()) {
        return Err(Error::InvalidParameter(
            "need delta > 0 and finite b".into(),
        ));
    }

    let mut lhs = Vec::with_capacity(n);
    let mut margins = Vec::with_capacity(n);
    for i in 0..n {
        let mut l_row = Vec::new();
        let mut m_row = Vec::new();
        for a in 0..model.num_actions(i) {
            let mut acc = 0.0;
            for (j, &rate) in model.rates(i, a).iter().enumerate() {
                if rate == 0.0 {
                    continue;
                }
                let exponent = cert.v[j] - cert.v[i];
                if exponent > MAX_SAFE_EXPONENT {
                    return Err(Error::LyapunovOverflow {
                        value: exponent,
                        max_safe: MAX_SAFE_EXPONENT,
                    });
                }
                acc += rate * exponent.exp();
            }
            let rhs = -cert.delta * cert.drift_weight[i] + if i == 0 { cert.b } else { 0.0 };
            l_row.push(acc);
            m_row.push(rhs - acc);
        }
        lhs.push(l_row);
        margins.push(m_row);
    }
    let min_margin = margins
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    Ok(LyapunovReport {
        lhs,
        margins,
        min_margin,
        holds: min_margin >= 0.0,
        theta_cost_below_delta: theta.map(|t| t * model.cost_sup() < cert.delta),
    })
}

/// Searches certificates of the form `V = (0, v, …, v)`, `drift_weight ≡ 1`
/// over the candidate levels `v`, returning the one with the largest `δ`.
///
/// For a fixed `v` the best `δ` is `min_{i≠0, a} −lhs(i, a)` and `b` is
/// the smallest value closing the inequality at state 0 (plus a rounding
/// allowance). Returns `None` if no candidate yields `δ > 0`.
pub fn search_certificate(model: &CtmdpModel, levels: &[f64]) -> Option<LyapunovCertificate> {
    let n = model.n();
    if n < 2 {
        return None;
    }
    let mut best: Option<LyapunovCertificate> = None;
    for &level in levels {
        if !(0.0..=MAX_SAFE_EXPONENT).contains(&level) {
            continue;
        }
        let mut v = vec![level; n];
        v[0] = 0.0;
        let probe = LyapunovCertificate {
            v: v.clone(),
            drift_weight: vec![1.0; n],
            delta: 1.0,
            b: 0.0,
        };
        let Ok(report) = check_lyapunov(model, &probe, None) else {
            continue;
        };
        let delta = report.lhs[1..]
            .iter()
            .flatten()
            .map(|l| -l)
            .fold(f64::INFINITY, f64::min);
        if !(delta > 0.0) {
            continue;
        }
        let lhs0 = report.lhs[0]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let b = lhs0 + delta + 1e-12 * (1.0 + lhs0.abs() + delta);
        if best.as_ref().is_none_or(|c| delta > c.delta) {
            best = Some(LyapunovCertificate {
                v,
                drift_weight: vec![1.0; n],
                delta,
                b,
            });
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn symmetric_assembly() {
        let a = twisted_generator(&instances::two_state_symmetric(3.0), &[0, 0], 0.5);
        assert_eq!(a, vec![vec![-1.0 + 1.5, 1.0], vec![1.0, -1.0 + 1.5]]);
        let m = instances::desk_m2().map_costs(|_| 0.0, |g| g).unwrap();
        assert_eq!(twisted_generator(&m, &[1, 0], 0.5), m.generator(&[1, 0]));
    }

    #[test]
    fn constant_cost_growth_rate() {
        for theta in [0.1, 0.5, 0.9] {
            let e = evaluate_policy(&instances::two_state_symmetric(2.5), &[0, 0], theta).unwrap();
            assert!((e.rho - 2.5).abs() <= 1e-10);
            assert_eq!(e.h[0], 1.0);
            assert!((e.h[1] - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn zero_cost_growth_rate() {
        let m = instances::desk_m2().map_costs(|_| 0.0, |g| g).unwrap();
        let e = evaluate_policy(&m, &[0, 0], 0.5).unwrap();
        assert!(e.rho.abs() <= 1e-10);
        assert!(e.h.iter().all(|x| (x - 1.0).abs() <= 1e-10));
    }

    #[test]
    fn desk_policy_aa_closed_form() {
        // A = [[0, 1], [1, -1]]: μ² + μ − 1 = 0, μ = (√5 − 1)/2, h = (1, μ).
        let m = instances::desk_m2();
        let e = evaluate_policy(&m, &[0, 0], 0.5).unwrap();
        let mu = (5f64.sqrt() - 1.0) / 2.0;
        assert!((e.mu - mu).abs() <= 1e-10);
        assert!((e.rho - 2.0 * mu).abs() <= 1e-10);
        assert!((e.h[1] - mu).abs() <= 1e-10);
        assert!(poisson_residual(&m, &[0, 0], 0.5, &e) <= 1e-8);
    }

    #[test]
    fn reducible_policy_rejected() {
        let m = CtmdpModel::builder(2)
            .action(0, "a", 1.0, &[(1, 1.0)])
            .action(1, "a", 1.0, &[])
            .build()
            .unwrap();
        assert!(matches!(
            evaluate_policy(&m, &[0, 0], 0.5).unwrap_err(),
            Error::Reducible { .. }
        ));
        assert!(matches!(
            principal_eigen(&twisted_generator(&m, &[0, 0], 0.5), 0.5).unwrap_err(),
            Error::ReducibleMatrix
        ));
    }

    #[test]
    fn zero_potential_fails_away_from_reference() {
        let m = instances::two_state_symmetric(1.0);
        let cert = LyapunovCertificate {
            v: vec![0.0, 0.0],
            drift_weight: vec![1.0, 1.0],
            delta: 0.1,
            b: 1.0,
        };
        let r = check_lyapunov(&m, &cert, None).unwrap();
        assert_eq!(r.lhs, vec![vec![0.0], vec![0.0]]);
        assert!(!r.holds);
        assert!(r.margins[0][0] >= 0.0 && r.margins[1][0] < 0.0);
    }

    #[test]
    fn two_state_certificate_closed_by_hand() {
        // lhs(1) = e^{−v}(−e^{v} + 1) = e^{−v} − 1, lhs(0) = e^{v} − 1.
        let m = instances::two_state_symmetric(1.0);
        let v1: f64 = 1.3;
        let w = vec![1.0, 2.0];
        let delta = (1.0 - (-v1).exp()) / w[1];
        let b = v1.exp() - 1.0 + delta * w[0];
        let cert = LyapunovCertificate {
            v: vec![0.0, v1],
            drift_weight: w,
            delta,
            b,
        };
        let r = check_lyapunov(&m, &cert, Some(0.5)).unwrap();
        assert!((r.lhs[1][0] - ((-v1).exp() - 1.0)).abs() < 1e-15);
        assert!((r.lhs[0][0] - (v1.exp() - 1.0)).abs() < 1e-15);
        assert!(r.min_margin >= -1e-15);
        assert_eq!(r.theta_cost_below_delta, Some(0.5 < delta));
    }

    #[test]
    fn overflow_reported() {
        let m = instances::two_state_symmetric(1.0);
        let cert = LyapunovCertificate {
            v: vec![0.0, 800.0],
            drift_weight: vec![1.0, 1.0],
            delta: 0.1,
            b: 1.0,
        };
        assert!(matches!(
            check_lyapunov(&m, &cert, None).unwrap_err(),
            Error::LyapunovOverflow { .. }
        ));
    }

    #[test]
    fn search_on_desk_model() {
        let m = instances::desk_m2();
        let levels: Vec<f64> = (0..=25).map(|k| 0.5 + 0.1 * k as f64).collect();
        let cert = search_certificate(&m, &levels).unwrap();
        // δ = 1 − e^{−v} grows with v, so the top of the grid wins.
        assert!((cert.v[1] - 3.0).abs() < 1e-12);
        assert!((cert.delta - (1.0 - (-3.0f64).exp())).abs() < 1e-12);
        assert!(check_lyapunov(&m, &cert, None).unwrap().holds);
    }
}
