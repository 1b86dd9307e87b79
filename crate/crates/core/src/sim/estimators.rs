//! Monte Carlo estimators of exponential cost functionals.
//!
//! Each trajectory contributes a log-weight `ℓ_k`; the estimate of
//! `E e^ℓ` is formed after shifting by `max ℓ`, so large exponents never
//! overflow. The log of the mean and any scaled certainty equivalent carry
//! delta-method standard errors `SE/mean`.

use rayon::prelude::*;
use serde::Serialize;

use super::{check_walk, trajectory_rng, walk, ActionSource, StopRule};
use crate::avg_eigen::{evaluate_policy, LyapunovCertificate, StationaryPolicy};
use crate::error::{check_positive, check_theta, Error, Result};
use crate::model::CtmdpModel;

/// Default relative bias allowed by discounted truncation.
pub const DEFAULT_TRUNCATION_BIAS: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct McEstimate {
    pub functional: String,
    pub n_samples: usize,
    pub seed: u64,
    /// Estimate of `E e^ℓ`; infinite if it exceeds the float range.
    pub mean: f64,
    pub std_error: f64,
    /// `log mean`, finite even when `mean` overflows.
    pub log_mean: f64,
    pub log_std_error: f64,
    /// Multiplier applied to `log_mean` for the certainty equivalent.
    pub ce_scale: f64,
    pub certainty_equivalent: f64,
    pub ce_std_error: f64,
    /// Bound on the systematic error, in the units given by `bias_note`.
    pub bias_bound: Option<f64>,
    pub bias_note: Option<String>,
}

impl McEstimate {
    /// `|mean − target| ≤ k·SE (+ slack)`.
    pub fn agrees_with(&self, target: f64, k: f64, slack: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error + slack
    }
}

/// Sum in a fixed binary tree, independent of how the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn summarize(functional: String, seed: u64, ell: &[f64], ce_scale: f64) -> McEstimate {
    let n = ell.len();
    let shift = ell.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let y: Vec<f64> = ell.iter().map(|l| (l - shift).exp()).collect();
    let mean_y = pairwise_sum(&y) / n as f64;
    let sq: Vec<f64> = y.iter().map(|v| (v - mean_y) * (v - mean_y)).collect();
    let var_y = if n > 1 {
        pairwise_sum(&sq) / (n - 1) as f64
    } else {
        0.0
    };
    let se_y = (var_y / n as f64).sqrt();
    let scale = shift.exp();
    let log_mean = shift + mean_y.ln();
    let log_std_error = se_y / mean_y;
    McEstimate {
        functional,
        n_samples: n,
        seed,
        mean: scale * mean_y,
        std_error: scale * se_y,
        log_mean,
        log_std_error,
        ce_scale,
        certainty_equivalent: ce_scale * log_mean,
        ce_std_error: ce_scale * log_std_error,
        bias_bound: None,
        bias_note: None,
    }
}

fn check_samples(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    Ok(())
}

fn collect<F>(n: usize, seed: u64, sample: F) -> Result<Vec<f64>>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> Result<f64> + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|k| sample(&mut trajectory_rng(seed, k)))
        .collect()
}

/// Piecewise-constant running-cost multiplier: `m[k]` on `[times[k], times[k+1])`,
/// the last value beyond the grid.
#[derive(Debug, Clone, Copy)]
pub struct CostSchedule<'a> {
    pub times: &'a [f64],
    pub multiplier: &'a [f64],
}

impl CostSchedule<'_> {
    /// `∫_a^b m(t) dt`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let mut k = self.times.partition_point(|&s| s <= a).saturating_sub(1);
        let mut t = a;
        let mut acc = 0.0;
        while t < b {
            let end = self.times.get(k + 1).map_or(b, |&s| s.min(b));
            acc += self.multiplier[k.min(self.multiplier.len() - 1)] * (end - t);
            t = end;
            k += 1;
        }
        acc
    }
}

/// `E_i exp(θ(∫₀ᵀ m(t) c(X_t, u_t) dt + g(X_T)))` with the certainty
/// equivalent `θ⁻¹ log` of it.
#[allow(clippy::too_many_arguments)]
pub fn mc_finite_cost(
    model: &CtmdpModel,
    policy: &dyn ActionSource,
    theta: f64,
    horizon: f64,
    start: usize,
    schedule: Option<CostSchedule<'_>>,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_theta(theta)?;
    check_positive("horizon", horizon)?;
    check_samples(n_samples)?;
    if let Some(s) = schedule {
        if s.times.is_empty() || s.times.len() != s.multiplier.len() {
            return Err(Error::Dimension(
                "cost schedule grid and values differ in length".into(),
            ));
        }
    }
    check_walk(model, policy, start, 0.0, StopRule::At(horizon))?;
    let ell = collect(n_samples, seed, |rng| {
        let mut cost = 0.0;
        let end = walk(
            model,
            policy,
            start,
            0.0,
            StopRule::At(horizon),
            rng,
            |s, a, t1, t2| {
                let c = model.cost(s, a);
                cost += match schedule {
                    Some(sch) => c * sch.integral(t1, t2),
                    None => c * (t2 - t1),
                };
            },
        )?;
        Ok(theta * (cost + model.terminal()[end.state]))
    })?;
    Ok(summarize(
        format!(
            "finite-horizon E exp(theta*(int_0^T c dt + g(X_T))); theta={theta}, T={horizon}, start={start}"
        ),
        seed,
        &ell,
        1.0 / theta,
    ))
}

/// How the infinite discounted integral is made finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DiscountHorizon {
    /// Stop at `t_max`; the omitted tail multiplies the functional by at most
    /// `exp(θ‖c‖e^{−α t_max}/α)`. Fails if that exceeds `1 + max_bias`.
    Truncated { t_max: f64, max_bias: f64 },
    /// Stop at `T_ε = α⁻¹ log(θ/ε)` and multiply by `exp(ε‖c‖/α)`: the exact
    /// representation of the ε-boundary problem.
    EpsBoundary { eps: f64 },
}

/// Smallest truncation time whose relative bias is at most `max_bias`.
pub fn truncation_time(theta: f64, alpha: f64, cost_sup: f64, max_bias: f64) -> f64 {
    if cost_sup == 0.0 {
        return 0.0;
    }
    let ratio = (1.0 + max_bias).ln() * alpha / (theta * cost_sup);
    (-ratio.ln() / alpha).max(0.0)
}

/// `E_i exp(θ ∫₀^∞ e^{−αt} c(X_t, u_t) dt)`.
#[allow(clippy::too_many_arguments)]
pub fn mc_discounted_cost(
    model: &CtmdpModel,
    policy: &dyn ActionSource,
    theta: f64,
    alpha: f64,
    start: usize,
    horizon: DiscountHorizon,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_theta(theta)?;
    check_positive("alpha", alpha)?;
    check_samples(n_samples)?;
    let cost_sup = model.cost_sup();
    let (t_end, offset, bias_bound, bias_note) = match horizon {
        DiscountHorizon::Truncated { t_max, max_bias } => {
            check_positive("max_bias", max_bias)?;
            let bias = (theta * cost_sup * (-alpha * t_max).exp() / alpha).exp() - 1.0;
            if !(t_max >= 0.0) || bias > max_bias {
                return Err(Error::TruncationTooShort {
                    t_max,
                    required: truncation_time(theta, alpha, cost_sup, max_bias),
                    bias,
                });
            }
            (
                t_max,
                0.0,
                Some(bias),
                Some("relative: true value lies in [mean, mean*(1+bias)]".to_string()),
            )
        }
        DiscountHorizon::EpsBoundary { eps } => {
            if !(eps > 0.0 && eps < theta) {
                return Err(Error::InvalidParameter(format!(
                    "need 0 < eps < theta, got eps = {eps}"
                )));
            }
            let offset = eps * cost_sup / alpha;
            (
                (theta / eps).ln() / alpha,
                offset,
                Some(offset.exp() - 1.0),
                Some(
                    "relative: exact for the eps-boundary value; the eps -> 0 limit lies in \
                     [mean/(1+bias), mean]"
                        .to_string(),
                ),
            )
        }
    };
    check_walk(model, policy, start, 0.0, StopRule::At(t_end))?;
    let ell = collect(n_samples, seed, |rng| {
        let mut acc = 0.0;
        walk(
            model,
            policy,
            start,
            0.0,
            StopRule::At(t_end),
            rng,
            |s, a, t1, t2| {
                acc += model.cost(s, a) / alpha * ((-alpha * t1).exp() - (-alpha * t2).exp());
            },
        )?;
        Ok(theta * acc + offset)
    })?;
    let mut est = summarize(
        format!(
            "discounted E exp(theta*int_0^inf e^(-alpha t) c dt); theta={theta}, alpha={alpha}, \
             start={start}, horizon={horizon:?}"
        ),
        seed,
        &ell,
        1.0 / theta,
    );
    est.bias_bound = bias_bound;
    est.bias_note = bias_note;
    Ok(est)
}

/// Horizon `100 / (smallest positive rate)`.
pub fn default_growth_horizon(model: &CtmdpModel) -> f64 {
    let min_rate = (0..model.n())
        .flat_map(|i| (0..model.num_actions(i)).map(move |a| (i, a)))
        .flat_map(|(i, a)| {
            model
                .rates(i, a)
                .iter()
                .enumerate()
                .filter(move |&(j, &r)| j != i && r > 0.0)
                .map(|(_, &r)| r)
        })
        .fold(f64::INFINITY, f64::min);
    if min_rate.is_finite() {
        100.0 / min_rate
    } else {
        100.0
    }
}

/// Interval containing `(θT)⁻¹ log E_i e^{θ∫₀ᵀc} − ρ` for every `T`, from
/// the positive eigenvector `h`: `h/h_max ≤ 𝟙 ≤ h/h_min`.
pub fn growth_bias_bracket(h: &[f64], start: usize, theta: f64, horizon: f64) -> (f64, f64) {
    let h_max = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h_min = h.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = theta * horizon;
    (
        (h[start] / h_max).ln() / scale,
        (h[start] / h_min).ln() / scale,
    )
}

/// `(θT)⁻¹ log E_i exp(θ ∫₀ᵀ c dt)` under a stationary policy; the bias
/// bracket against the growth rate is attached.
pub fn mc_average_growth(
    model: &CtmdpModel,
    policy: &StationaryPolicy,
    theta: f64,
    horizon: f64,
    start: usize,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_theta(theta)?;
    check_positive("horizon", horizon)?;
    check_samples(n_samples)?;
    check_walk(model, policy, start, 0.0, StopRule::At(horizon))?;
    let ell = collect(n_samples, seed, |rng| {
        let mut cost = 0.0;
        walk(
            model,
            policy,
            start,
            0.0,
            StopRule::At(horizon),
            rng,
            |s, a, t1, t2| {
                cost += model.cost(s, a) * (t2 - t1);
            },
        )?;
        Ok(theta * cost)
    })?;
    let mut est = summarize(
        format!(
            "growth (theta T)^-1 log E exp(theta int_0^T c dt); theta={theta}, T={horizon}, start={start}"
        ),
        seed,
        &ell,
        1.0 / (theta * horizon),
    );
    if let Ok(eval) = evaluate_policy(model, policy, theta) {
        let (lo, hi) = growth_bias_bracket(&eval.h, start, theta, horizon);
        est.bias_bound = Some(lo.abs().max(hi.abs()));
        est.bias_note = Some(format!(
            "certainty equivalent minus growth rate lies in [{lo}, {hi}]"
        ));
    }
    Ok(est)
}

#[derive(Debug, Clone, Serialize)]
pub struct HittingEstimate {
    pub estimate: McEstimate,
    /// `e^{V(start)}` when a certificate was supplied.
    pub bound: Option<f64>,
    /// `mean ≤ bound + 3 SE`.
    pub within_bound: Option<bool>,
    pub note: Option<String>,
}

const RETURN_TIME_NOTE: &str =
    "start = 0: tau_0 is taken as the first return to 0 after leaving it";

/// `E_i e^{η τ₀}` with `τ₀` the first entrance to state 0.
#[allow(clippy::too_many_arguments)]
pub fn mc_exp_hitting(
    model: &CtmdpModel,
    policy: &StationaryPolicy,
    eta: f64,
    start: usize,
    certificate: Option<&LyapunovCertificate>,
    n_samples: usize,
    seed: u64,
) -> Result<HittingEstimate> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "eta must be >= 0, got {eta}"
        )));
    }
    if let Some(cert) = certificate {
        if cert.v.len() != model.n() {
            return Err(Error::Dimension("certificate length differs from n".into()));
        }
        if !(eta < cert.delta) {
            return Err(Error::InvalidParameter(format!(
                "eta = {eta} must be below delta = {}",
                cert.delta
            )));
        }
    }
    check_samples(n_samples)?;
    check_walk(model, policy, start, 0.0, StopRule::HitZero)?;
    let ell = collect(n_samples, seed, |rng| {
        let end = walk(
            model,
            policy,
            start,
            0.0,
            StopRule::HitZero,
            rng,
            |_, _, _, _| {},
        )?;
        Ok(eta * end.time)
    })?;
    let estimate = summarize(
        format!("hitting E exp(eta tau_0); eta={eta}, start={start}"),
        seed,
        &ell,
        1.0,
    );
    let bound = certificate.map(|c| c.v[start].exp());
    let within_bound = bound.map(|b| estimate.mean <= b + 3.0 * estimate.std_error);
    Ok(HittingEstimate {
        estimate,
        bound,
        within_bound,
        note: (start == 0).then(|| RETURN_TIME_NOTE.to_string()),
    })
}

/// `E_i exp(θ ∫₀^{τ₀} (c − ρ) dt)`, the stochastic representation of the
/// Poisson eigenvector at state `i ≠ 0`.
#[allow(clippy::too_many_arguments)]
pub fn mc_poisson_h(
    model: &CtmdpModel,
    policy: &StationaryPolicy,
    theta: f64,
    rho: f64,
    start: usize,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_theta(theta)?;
    if !rho.is_finite() {
        return Err(Error::InvalidParameter("rho must be finite".into()));
    }
    check_samples(n_samples)?;
    check_walk(model, policy, start, 0.0, StopRule::HitZero)?;
    let ell = collect(n_samples, seed, |rng| {
        let mut acc = 0.0;
        walk(
            model,
            policy,
            start,
            0.0,
            StopRule::HitZero,
            rng,
            |s, a, t1, t2| {
                acc += (model.cost(s, a) - rho) * (t2 - t1);
            },
        )?;
        Ok(theta * acc)
    })?;
    let mut est = summarize(
        format!("poisson E exp(theta int_0^tau_0 (c - rho) dt); theta={theta}, rho={rho}, start={start}"),
        seed,
        &ell,
        1.0,
    );
    if start == 0 {
        est.bias_note = Some(RETURN_TIME_NOTE.to_string());
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn pairwise_sum_small_and_large() {
        assert_eq!(pairwise_sum(&[]), 0.0);
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn summary_of_constant_samples() {
        let e = summarize("x".into(), 0, &[2.0; 10], 0.5);
        assert!((e.mean - 2f64.exp()).abs() < 1e-15);
        assert_eq!(e.std_error, 0.0);
        assert_eq!(e.log_mean, 2.0);
        assert_eq!(e.certainty_equivalent, 1.0);
    }

    #[test]
    fn summary_survives_huge_exponents() {
        let e = summarize("x".into(), 0, &[1000.0, 1000.0 + 2f64.ln()], 1.0);
        assert!(e.mean.is_infinite());
        assert!((e.log_mean - (1000.0 + 1.5f64.ln())).abs() < 1e-12);
        assert!(e.log_std_error.is_finite());
    }

    #[test]
    fn cost_schedule_integral() {
        let s = CostSchedule {
            times: &[0.0, 1.0, 2.0],
            multiplier: &[2.0, 0.0, 5.0],
        };
        assert!((s.integral(0.5, 1.5) - 1.0).abs() < 1e-15);
        assert!((s.integral(0.0, 3.0) - 7.0).abs() < 1e-15);
        assert_eq!(s.integral(1.2, 1.8), 0.0);
    }

    #[test]
    fn truncation_time_meets_bias() {
        let t = truncation_time(0.5, 1.0, 2.0, 1e-4);
        let bias = (0.5 * 2.0 * (-t).exp()).exp() - 1.0;
        assert!((bias - 1e-4).abs() < 1e-12);
        assert_eq!(truncation_time(0.5, 1.0, 0.0, 1e-4), 0.0);
        let m = instances::desk_m2();
        let p = StationaryPolicy(vec![1, 0]);
        let h = DiscountHorizon::Truncated {
            t_max: t - 0.5,
            max_bias: 1e-4,
        };
        assert!(matches!(
            mc_discounted_cost(&m, &p, 0.5, 1.0, 0, h, 10, 0).unwrap_err(),
            Error::TruncationTooShort { .. }
        ));
    }

    #[test]
    fn growth_bracket_is_signed_correctly() {
        let (lo, hi) = growth_bias_bracket(&[1.0, 0.5], 0, 0.5, 10.0);
        assert_eq!(lo, 0.0);
        assert!((hi - 2f64.ln() / 5.0).abs() < 1e-15);
    }

    #[test]
    fn hitting_needs_eta_below_delta() {
        let m = instances::two_state_symmetric(1.0);
        let cert = LyapunovCertificate {
            v: vec![0.0, 1.0],
            drift_weight: vec![1.0, 1.0],
            delta: 0.5,
            b: 3.0,
        };
        let p = StationaryPolicy::first(&m);
        assert!(mc_exp_hitting(&m, &p, 0.6, 1, Some(&cert), 10, 0).is_err());
        let r = mc_exp_hitting(&m, &p, 0.0, 0, None, 10, 0).unwrap();
        assert_eq!(r.estimate.mean, 1.0);
        assert!(r.note.is_some());
    }
}
