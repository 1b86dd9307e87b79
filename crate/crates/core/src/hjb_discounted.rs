//! Infinite-horizon discounted exponential cost.
//!
//! With `W(θ, i) = inf E[exp(θ ∫₀^∞ e^{−αt} c dt)]` the dynamic programming
//! equation is an ODE in the risk parameter:
//!
//! ```text
//! α θ dW/dθ(θ, i) = min_{u ∈ U_i} [θ c(i, u) W(θ, i) + Σ_j λ_ij(u) W(θ, j)],
//! W(θ, i) → 1 as θ → 0.
//! ```
//!
//! The equation is singular at `θ = 0`, so it is integrated forward from a
//! boundary `θ = ε` with the state-independent value `exp(ε‖c‖/α)`, and the
//! limit `ε → 0` is approached by halving `ε`.
//!
//! By the stopping-time representation of the ε-problem the true value is
//! bracketed by `W_ε / exp(ε‖c‖/α) ≤ W ≤ W_ε`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_positive, Error, Result};
use crate::model::CtmdpModel;

/// Gaps at or below this level count as converged in the halving study.
pub const GAP_FLOOR: f64 = 1e-12;

/// Solution of the ε-boundary problem on a uniform θ grid.
#[derive(Debug, Clone, Serialize)]
pub struct DiscountedSolution {
    pub alpha: f64,
    pub eps: f64,
    pub theta_grid: Vec<f64>,
    /// `w[k][i] = W_ε(θ_k, i)`.
    pub w: Vec<Vec<f64>>,
    /// Minimizing action per `(θ_k, i)`.
    pub policy: Vec<Vec<usize>>,
    /// `valpha[k][i] = θ_k⁻¹ log W_ε(θ_k, i)`.
    pub valpha: Vec<Vec<f64>>,
    #[serde(skip)]
    slope: Vec<Vec<f64>>,
}

impl DiscountedSolution {
    pub fn spacing(&self) -> f64 {
        if self.theta_grid.len() < 2 {
            0.0
        } else {
            (self.theta_grid[self.theta_grid.len() - 1] - self.theta_grid[0])
                / (self.theta_grid.len() - 1) as f64
        }
    }

    /// `exp(ε‖c‖/α)`, the boundary value and the width factor of the
    /// bracket around the ε → 0 limit.
    pub fn boundary_factor(&self, cost_sup: f64) -> f64 {
        (self.eps * cost_sup / self.alpha).exp()
    }

    /// Interval `[W_ε/h_ε, W_ε]` that contains the limit value at row `k`.
    pub fn limit_bracket(&self, row: usize, cost_sup: f64) -> Vec<(f64, f64)> {
        let h = self.boundary_factor(cost_sup);
        self.w[row].iter().map(|&w| (w / h, w)).collect()
    }

    /// Index of the grid row nearest to `theta`, if `theta` lies within half
    /// a spacing of the grid.
    pub fn nearest_row(&self, theta: f64) -> Result<usize> {
        let lo = self.theta_grid[0];
        let hi = *self.theta_grid.last().expect("nonempty grid");
        let h = self.spacing();
        if !(theta >= lo - 0.5 * h && theta <= hi + 0.5 * h) {
            return Err(Error::ThetaOutOfRange { theta, lo, hi });
        }
        if h == 0.0 {
            return Ok(0);
        }
        let k = ((theta - lo) / h).round() as isize;
        Ok(k.clamp(0, self.theta_grid.len() as isize - 1) as usize)
    }

    /// Cubic Hermite interpolation of `W_ε(θ, ·)` from node values and the
    /// ODE slopes.
    pub fn interpolate(&self, theta: f64) -> Result<Vec<f64>> {
        let lo = self.theta_grid[0];
        let hi = *self.theta_grid.last().expect("nonempty grid");
        if !(theta >= lo - 1e-12 && theta <= hi + 1e-12) {
            return Err(Error::ThetaOutOfRange { theta, lo, hi });
        }
        let last = self.theta_grid.len() - 1;
        if last == 0 {
            return Ok(self.w[0].clone());
        }
        let h = self.spacing();
        let k = (((theta - lo) / h).floor() as usize).min(last - 1);
        let (t0, t1) = (self.theta_grid[k], self.theta_grid[k + 1]);
        let dt = t1 - t0;
        let s = ((theta - t0) / dt).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        Ok((0..self.w[k].len())
            .map(|i| {
                h00 * self.w[k][i]
                    + h10 * dt * self.slope[k][i]
                    + h01 * self.w[k + 1][i]
                    + h11 * dt * self.slope[k + 1][i]
            })
            .collect())
    }

    fn restricted_from(&self, theta_lo: f64) -> Self {
        let start = self
            .theta_grid
            .iter()
            .position(|&t| t >= theta_lo - 1e-12)
            .unwrap_or(self.theta_grid.len() - 1);
        Self {
            alpha: self.alpha,
            eps: self.eps,
            theta_grid: self.theta_grid[start..].to_vec(),
            w: self.w[start..].to_vec(),
            policy: self.policy[start..].to_vec(),
            valpha: self.valpha[start..].to_vec(),
            slope: self.slope[start..].to_vec(),
        }
    }
}

/// `min_u [θ c W_i + Σ_j λ_ij W_j] / (αθ)` and the minimizers.
fn rhs(model: &CtmdpModel, alpha: f64, theta: f64, w: &[f64]) -> (Vec<f64>, Vec<usize>) {
    (0..model.n())
        .map(|i| {
            let (v, a) = model.min_action_value(i, theta, w);
            (v / (alpha * theta), a)
        })
        .unzip()
}

fn axpy(base: &[f64], scale: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

/// Solves the ε-boundary problem forward in θ with fixed-step RK4 on
/// `steps` uniform intervals of `[eps, theta_max]`.
pub fn solve_eps(
    model: &CtmdpModel,
    alpha: f64,
    eps: f64,
    theta_max: f64,
    steps: usize,
) -> Result<DiscountedSolution> {
    check_positive("alpha", alpha)?;
    if !(eps > 0.0 && eps < theta_max && theta_max < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < eps < theta_max < 1, got eps = {eps}, theta_max = {theta_max}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let step = (theta_max - eps) / steps as f64;
    let cost_sup = model.cost_sup();
    let lipschitz = (cost_sup + 2.0 * model.rate_bound() / eps) / alpha;
    let product = step * lipschitz;
    if product >= 1.0 {
        return Err(Error::StabilityGuard {
            step,
            lipschitz,
            product,
        });
    }

    let mut theta_grid: Vec<f64> = (0..=steps).map(|k| eps + k as f64 * step).collect();
    theta_grid[steps] = theta_max;

    let boundary = (eps * cost_sup / alpha).exp();
    let mut w = Vec::with_capacity(steps + 1);
    let mut policy = Vec::with_capacity(steps + 1);
    let mut slope = Vec::with_capacity(steps + 1);
    w.push(vec![boundary; model.n()]);

    for k in 0..=steps {
        let theta = theta_grid[k];
        let (f, argmin) = rhs(model, alpha, theta, &w[k]);
        policy.push(argmin);
        if k == steps {
            slope.push(f);
            break;
        }
        let cur = &w[k];
        let k2 = rhs(model, alpha, theta + 0.5 * step, &axpy(cur, 0.5 * step, &f)).0;
        let k3 = rhs(
            model,
            alpha,
            theta + 0.5 * step,
            &axpy(cur, 0.5 * step, &k2),
        )
        .0;
        let k4 = rhs(model, alpha, theta + step, &axpy(cur, step, &k3)).0;
        let next: Vec<f64> = (0..cur.len())
            .map(|i| cur[i] + step / 6.0 * (f[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        if let Some(i) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                location: format!("theta = {}, state {i}", theta_grid[k + 1]),
            });
        }
        slope.push(f);
        w.push(next);
    }

    let valpha = value_rows(&theta_grid, &w)?;
    Ok(DiscountedSolution {
        alpha,
        eps,
        theta_grid,
        w,
        policy,
        valpha,
        slope,
    })
}

fn value_rows(theta_grid: &[f64], w: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    theta_grid
        .iter()
        .zip(w)
        .enumerate()
        .map(|(k, (&theta, row))| {
            row.iter()
                .enumerate()
                .map(|(i, &v)| {
                    if v >= 1.0 - 1e-9 {
                        Ok(v.max(1.0).ln() / theta)
                    } else {
                        Err(Error::ValueBelowOne {
                            row: k,
                            state: i,
                            value: v,
                        })
                    }
                })
                .collect()
        })
        .collect()
}

/// Result of the ε-halving study.
#[derive(Debug, Clone, Serialize)]
pub struct LimitSolution {
    pub eps_sequence: Vec<f64>,
    /// `gaps[k] = ‖W_{ε_k} − W_{ε_{k+1}}‖_∞` over `θ ∈ [max ε, θ_max]`.
    pub gaps: Vec<f64>,
    /// Finest-ε solution restricted to `θ ≥ max ε`.
    pub solution: DiscountedSolution,
}

/// Sup-norm gaps between consecutive solutions on `[theta_lo, theta_hi]`,
/// evaluated at the nodes of the finer solution with the coarser one
/// interpolated.
pub fn cauchy_gaps(
    solutions: &[DiscountedSolution],
    theta_lo: f64,
    theta_hi: f64,
) -> Result<Vec<f64>> {
    solutions
        .windows(2)
        .map(|pair| {
            let (coarse, fine) = (&pair[0], &pair[1]);
            let mut gap: f64 = 0.0;
            for (k, &theta) in fine.theta_grid.iter().enumerate() {
                if theta < theta_lo - 1e-12 || theta > theta_hi + 1e-12 {
                    continue;
                }
                let other = coarse.interpolate(theta)?;
                for (a, b) in fine.w[k].iter().zip(&other) {
                    gap = gap.max((a - b).abs());
                }
            }
            Ok(gap)
        })
        .collect()
}

/// Solves the ε-problem for every ε in a strictly decreasing sequence and
/// checks that the Cauchy gaps shrink.
pub fn solve_limit(
    model: &CtmdpModel,
    alpha: f64,
    theta_max: f64,
    steps: usize,
    eps_sequence: &[f64],
) -> Result<LimitSolution> {
    if eps_sequence.is_empty() {
        return Err(Error::InvalidParameter("eps sequence is empty".into()));
    }
    if eps_sequence.windows(2).any(|p| !(p[1] < p[0])) {
        return Err(Error::InvalidParameter(
            "eps sequence must be strictly decreasing".into(),
        ));
    }
    let solutions = eps_sequence
        .par_iter()
        .map(|&eps| solve_eps(model, alpha, eps, theta_max, steps))
        .collect::<Result<Vec<_>>>()?;
    let eps_max = eps_sequence[0];
    let gaps = cauchy_gaps(&solutions, eps_max, theta_max)?;
    check_gaps_decreasing(&gaps)?;
    let finest = solutions.last().expect("nonempty");
    Ok(LimitSolution {
        eps_sequence: eps_sequence.to_vec(),
        gaps,
        solution: finest.restricted_from(eps_max),
    })
}

pub fn check_gaps_decreasing(gaps: &[f64]) -> Result<()> {
    for (index, pair) in gaps.windows(2).enumerate() {
        if pair[1] >= pair[0] && pair[1] > GAP_FLOOR {
            return Err(Error::CauchyGapIncrease {
                index: index + 1,
                prev: pair[0],
                next: pair[1],
            });
        }
    }
    Ok(())
}

/// `V_α = θ⁻¹ log W` with a probe row for comparison against the
/// risk-neutral value.
#[derive(Debug, Clone, Serialize)]
pub struct DiscountedValue {
    pub theta_grid: Vec<f64>,
    pub valpha: Vec<Vec<f64>>,
    pub probe_theta: f64,
    pub probe_values: Vec<f64>,
}

/// Recomputes `V_α` from `W` and reports the row nearest `probe`.
///
/// Without a probe, the first row with `θ ≥ 100 ε` is used: below it the
/// boundary offset contributes up to `ε‖c‖/(αθ)` to `V_α`, which is
/// `‖c‖/α` at `θ = ε` itself.
pub fn discounted_value(sol: &DiscountedSolution, probe: Option<f64>) -> Result<DiscountedValue> {
    let valpha = value_rows(&sol.theta_grid, &sol.w)?;
    let row = match probe {
        Some(theta) => sol.nearest_row(theta)?,
        None => sol
            .theta_grid
            .iter()
            .position(|&t| t >= 100.0 * sol.eps)
            .unwrap_or(sol.theta_grid.len() - 1),
    };
    Ok(DiscountedValue {
        theta_grid: sol.theta_grid.clone(),
        probe_theta: sol.theta_grid[row],
        probe_values: valpha[row].clone(),
        valpha,
    })
}

/// Policy row in effect at time `t` for initial risk parameter `theta`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyLookup {
    /// `θ e^{−αt}`.
    pub lookup_theta: f64,
    /// Grid value actually used.
    pub grid_theta: f64,
    pub spacing: f64,
    pub row: usize,
    pub actions: Vec<usize>,
}

/// The optimal action at time `t` is the minimizer at `θ e^{−αt}`; this
/// looks up the nearest grid row.
pub fn discounted_policy_at_time(
    sol: &DiscountedSolution,
    theta: f64,
    t: f64,
) -> Result<PolicyLookup> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "time must be finite and >= 0, got {t}"
        )));
    }
    let lookup_theta = theta * (-sol.alpha * t).exp();
    let row = sol.nearest_row(lookup_theta)?;
    Ok(PolicyLookup {
        lookup_theta,
        grid_theta: sol.theta_grid[row],
        spacing: sol.spacing(),
        row,
        actions: sol.policy[row].clone(),
    })
}
