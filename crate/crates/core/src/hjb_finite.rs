//! Finite-horizon exponential-of-integral control.
//!
//! The exponential value `φ(t, i) = inf E[exp(θ(∫_t^T c + g(X_T)))]` solves
//! the backward system
//!
//! ```text
//! dφ/dt(t, i) + min_{u ∈ U_i} [θ c(t, i, u) φ(t, i) + Σ_j λ_ij(u) φ(t, j)] = 0,
//! φ(T, i) = exp(θ g(i)).
//! ```
//!
//! [`solve_finite_horizon`] integrates it with fixed-step RK4;
//! [`picard_solve`] iterates the equivalent integral equation with the
//! trapezoid rule and serves as an independent cross-check.
//!
//! Time dependence of the running cost is expressed as a nonnegative
//! multiplier sequence on the time grid: `c(t, i, u) = m_k c(i, u)` for
//! `t ∈ [t_k, t_{k+1})`.

use serde::Serialize;

use crate::error::{check_positive, check_theta, Error, Result};
use crate::linalg::sup_diff;
use crate::model::CtmdpModel;

/// Largest undershoot below 1 that is silently clamped.
pub const UNDERSHOOT_TOLERANCE: f64 = 1e-9;
/// Sup-norm gap between successive Picard iterates that ends the iteration.
pub const PICARD_TOLERANCE: f64 = 1e-10;

/// Exponential value and its logarithm on a uniform backward time grid.
#[derive(Debug, Clone, Serialize)]
pub struct ValueGrid {
    pub theta: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// `phi[k][i] = φ(t_k, i)`.
    pub phi: Vec<Vec<f64>>,
    /// `psi[k][i] = θ⁻¹ log φ(t_k, i)`.
    pub psi: Vec<Vec<f64>>,
    /// Running-cost multiplier `m_k`, one per grid row.
    pub cost_multiplier: Vec<f64>,
}

impl ValueGrid {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps() as f64
    }

    /// Values at `t = 0`.
    pub fn initial(&self) -> &[f64] {
        &self.phi[0]
    }
}

/// Markov policy, piecewise constant on `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarkovPolicy {
    pub times: Vec<f64>,
    /// `actions[k][i]`.
    pub actions: Vec<Vec<usize>>,
}

impl MarkovPolicy {
    /// Row index in effect at time `t` (clamped to the grid).
    pub fn row_at(&self, t: f64) -> usize {
        self.times
            .partition_point(|&s| s <= t)
            .saturating_sub(1)
            .min(self.times.len() - 1)
    }

    pub fn action_at(&self, t: f64, state: usize) -> usize {
        self.actions[self.row_at(t)][state]
    }
}

struct Setup {
    times: Vec<f64>,
    multiplier: Vec<f64>,
    step: f64,
    terminal_row: Vec<f64>,
}

fn setup(
    model: &CtmdpModel,
    theta: f64,
    horizon: f64,
    steps: usize,
    cost_multiplier: Option<&[f64]>,
) -> Result<Setup> {
    check_theta(theta)?;
    check_positive("horizon", horizon)?;
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let multiplier = match cost_multiplier {
        Some(m) => {
            if m.len() != steps + 1 {
                return Err(Error::Dimension(format!(
                    "cost multiplier has length {}, expected {}",
                    m.len(),
                    steps + 1
                )));
            }
            if let Some(bad) = m.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "cost multiplier entries must be finite and nonnegative, got {bad}"
                )));
            }
            m.to_vec()
        }
        None => vec![1.0; steps + 1],
    };
    let step = horizon / steps as f64;
    let mult_sup = multiplier.iter().copied().fold(0.0, f64::max);
    let lipschitz = 2.0 * model.rate_bound() + theta * model.cost_sup() * mult_sup;
    let product = step * lipschitz;
    if product >= 1.0 {
        return Err(Error::StabilityGuard {
            step,
            lipschitz,
            product,
        });
    }
    let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * step).collect();
    times[steps] = horizon;
    let terminal_row = model.terminal().iter().map(|g| (theta * g).exp()).collect();
    Ok(Setup {
        times,
        multiplier,
        step,
        terminal_row,
    })
}

/// `min_u [w c(i,u) v_i + Σ_j λ_ij(u) v_j]` for every state.
fn hamiltonian(model: &CtmdpModel, weight: f64, v: &[f64]) -> Vec<f64> {
    (0..model.n())
        .map(|i| model.min_action_value(i, weight, v).0)
        .collect()
}

fn axpy(base: &[f64], scale: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

/// Solves the finite-horizon system backward from `T` with fixed-step RK4
/// and records the minimizing action at every grid row.
pub fn solve_finite_horizon(
    model: &CtmdpModel,
    theta: f64,
    horizon: f64,
    steps: usize,
    cost_multiplier: Option<&[f64]>,
) -> Result<(ValueGrid, MarkovPolicy)> {
    let Setup {
        times,
        multiplier,
        step,
        terminal_row,
    } = setup(model, theta, horizon, steps, cost_multiplier)?;

    let n = model.n();
    let mut phi = vec![Vec::new(); steps + 1];
    phi[steps] = terminal_row;
    for k in (0..steps).rev() {
        let w = theta * multiplier[k];
        let next = &phi[k + 1];
        // In reversed time s = T - t the system reads dφ/ds = H(φ).
        let k1 = hamiltonian(model, w, next);
        let k2 = hamiltonian(model, w, &axpy(next, 0.5 * step, &k1));
        let k3 = hamiltonian(model, w, &axpy(next, 0.5 * step, &k2));
        let k4 = hamiltonian(model, w, &axpy(next, step, &k3));
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = next[i] + step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    location: format!("t = {}, state {i}", times[k]),
                });
            }
            if v < 1.0 {
                if 1.0 - v < UNDERSHOOT_TOLERANCE {
                    v = 1.0;
                } else {
                    return Err(Error::Undershoot {
                        row: k,
                        t: times[k],
                        state: i,
                        value: v,
                    });
                }
            }
            row.push(v);
        }
        phi[k] = row;
    }

    let grid = log_value(ValueGrid {
        theta,
        horizon,
        times,
        psi: Vec::new(),
        phi,
        cost_multiplier: multiplier,
    })?;
    let policy = extract_policy(model, &grid);
    Ok((grid, policy))
}

/// Result of [`picard_solve`].
#[derive(Debug, Clone, Serialize)]
pub struct PicardSolution {
    pub grid: ValueGrid,
    pub iterations: usize,
    pub final_gap: f64,
}

/// `∫₀¹ e^{−c(1−x)} x^p dx` for `p = 0, 1, 2`, by the series
/// `Σ_m (−c)^m p!/(p+m+1)!`, valid for the `c < 1` the stability guard
/// ensures.
fn kernel_moments(c: f64) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (p, slot) in out.iter_mut().enumerate() {
        let mut term = 1.0 / (p as f64 + 1.0);
        let mut acc = term;
        for m in 1..60 {
            term *= -c / (p + m + 1) as f64;
            acc += term;
            if term.abs() < 1e-18 * acc.abs() {
                break;
            }
        }
        *slot = acc;
    }
    out
}

/// Fixed point of the integral form of the system, iterated from
/// `φ ≡ e^{θ g}`.
///
/// With `s = T − t` and the shift `γ = max_{i,u} −λ_ii(u)`, the substitution
/// `ψ̃(s) = e^{γ s} φ(s)` gives `ψ̃(s) = ψ̃(0) + ∫₀^s G(ψ̃)` where
/// `G(v) = H(v) + γ v` has nonnegative coefficients. Iterating the plain
/// form `φ = e^{θg} + ∫ H(φ)` instead cancels terms of both signs and loses
/// about `e^{γT}` ulps, which stalls it above the tolerance on stiff models.
///
/// Back in `φ`, each step is
/// `φ(s+h) = e^{−γh} φ(s) + ∫₀^h e^{−γ(h−τ)} G(φ(s+τ)) dτ`, and the integral
/// is taken exactly against the quadratic through three neighbouring
/// nodes. `β = L/(L+1)` with `L = 2M + θ‖c‖` sets the iteration budget.
pub fn picard_solve(
    model: &CtmdpModel,
    theta: f64,
    horizon: f64,
    steps: usize,
    cost_multiplier: Option<&[f64]>,
) -> Result<PicardSolution> {
    let Setup {
        times,
        multiplier,
        step,
        terminal_row,
    } = setup(model, theta, horizon, steps, cost_multiplier)?;

    let mult_sup = multiplier.iter().copied().fold(0.0, f64::max);
    let lipschitz = 2.0 * model.rate_bound() + theta * model.cost_sup() * mult_sup;
    let beta = lipschitz / (lipschitz + 1.0);
    let budget = if beta > 0.0 {
        (PICARD_TOLERANCE.ln() / beta.ln()).ceil() as usize + 50
    } else {
        50
    };

    let gamma = model.rate_bound();
    let decay = (-gamma * step).exp();
    let [m0, m1, m2] = kernel_moments(gamma * step);
    // Nodes at x = −1, 0, 1 in units of h, x = 1 being the new point.
    let centered = [
        step * (m2 - m1) / 2.0,
        step * (m0 - m2),
        step * (m2 + m1) / 2.0,
    ];
    // First step: nodes at x = 0, 1, 2.
    let forward = [
        step * (m2 - 3.0 * m1 + 2.0 * m0) / 2.0,
        step * (2.0 * m1 - m2),
        step * (m2 - m1) / 2.0,
    ];
    let linear = [step * (m0 - m1), step * m1];

    let n = model.n();
    let shifted = |weight: f64, v: &[f64]| -> Vec<f64> {
        let mut g = hamiltonian(model, weight, v);
        for (gi, vi) in g.iter_mut().zip(v) {
            *gi += gamma * vi;
        }
        g
    };

    let mut phi = vec![terminal_row.clone(); steps + 1];
    let mut gap = f64::INFINITY;
    for iteration in 1..=budget {
        let mut next = vec![Vec::new(); steps + 1];
        next[steps] = terminal_row.clone();
        for k in (0..steps).rev() {
            // Segment [t_k, t_{k+1}] carries multiplier m_k at every node.
            let w = theta * multiplier[k];
            let new = shifted(w, &phi[k]);
            let old = shifted(w, &phi[k + 1]);
            let mut row: Vec<f64> = next[k + 1].iter().map(|v| decay * v).collect();
            if k + 2 <= steps {
                let older = shifted(w, &phi[k + 2]);
                for i in 0..n {
                    row[i] += centered[0] * older[i] + centered[1] * old[i] + centered[2] * new[i];
                }
            } else if k >= 1 {
                let beyond = shifted(w, &phi[k - 1]);
                for i in 0..n {
                    row[i] += forward[0] * old[i] + forward[1] * new[i] + forward[2] * beyond[i];
                }
            } else {
                for i in 0..n {
                    row[i] += linear[0] * old[i] + linear[1] * new[i];
                }
            }
            next[k] = row;
        }
        gap = phi
            .iter()
            .zip(&next)
            .map(|(a, b)| sup_diff(a, b))
            .fold(0.0, f64::max);
        if !gap.is_finite() {
            return Err(Error::NonFinite {
                location: format!("Picard iterate {iteration}"),
            });
        }
        phi = next;
        if gap < PICARD_TOLERANCE {
            let grid = log_value(ValueGrid {
                theta,
                horizon,
                times,
                psi: Vec::new(),
                phi,
                cost_multiplier: multiplier,
            })?;
            return Ok(PicardSolution {
                grid,
                iterations: iteration,
                final_gap: gap,
            });
        }
    }
    Err(Error::PicardNoConvergence {
        iterations: budget,
        gap,
    })
}

/// Minimizing action at every grid row; ties go to the lowest index.
pub fn extract_policy(model: &CtmdpModel, grid: &ValueGrid) -> MarkovPolicy {
    let actions = grid
        .phi
        .iter()
        .zip(&grid.cost_multiplier)
        .map(|(row, m)| {
            (0..model.n())
                .map(|i| model.min_action_value(i, grid.theta * m, row).1)
                .collect()
        })
        .collect();
    MarkovPolicy {
        times: grid.times.clone(),
        actions,
    }
}

/// Largest `|dφ/dt + min_u[·]|` over interior rows, with `dφ/dt` taken as a
/// central difference.
pub fn hjb_residual(model: &CtmdpModel, grid: &ValueGrid) -> f64 {
    let h = grid.step_size();
    let mut worst: f64 = 0.0;
    for k in 1..grid.steps() {
        let w = grid.theta * grid.cost_multiplier[k];
        let ham = hamiltonian(model, w, &grid.phi[k]);
        for i in 0..model.n() {
            let deriv = (grid.phi[k + 1][i] - grid.phi[k - 1][i]) / (2.0 * h);
            worst = worst.max((deriv + ham[i]).abs());
        }
    }
    worst
}

/// Residual split by smoothness. Where the minimizer switches, `φ''` jumps
/// and the central difference is only first order.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualReport {
    pub max: f64,
    /// Maximum over rows whose stencil `k−1, k, k+1` shares one policy row.
    pub smooth_max: f64,
    pub switch_rows: usize,
}

pub fn hjb_residual_report(
    model: &CtmdpModel,
    grid: &ValueGrid,
    policy: &MarkovPolicy,
) -> ResidualReport {
    let h = grid.step_size();
    let mut report = ResidualReport {
        max: 0.0,
        smooth_max: 0.0,
        switch_rows: 0,
    };
    for k in 1..grid.steps() {
        let w = grid.theta * grid.cost_multiplier[k];
        let ham = hamiltonian(model, w, &grid.phi[k]);
        let smooth = policy.actions[k - 1] == policy.actions[k]
            && policy.actions[k] == policy.actions[k + 1]
            && grid.cost_multiplier[k - 1] == grid.cost_multiplier[k]
            && grid.cost_multiplier[k] == grid.cost_multiplier[k + 1];
        if !smooth {
            report.switch_rows += 1;
        }
        for i in 0..model.n() {
            let deriv = (grid.phi[k + 1][i] - grid.phi[k - 1][i]) / (2.0 * h);
            let r = (deriv + ham[i]).abs();
            report.max = report.max.max(r);
            if smooth {
                report.smooth_max = report.smooth_max.max(r);
            }
        }
    }
    report
}

/// Fills `psi = θ⁻¹ log φ`. Fails if any `φ < 1 − 1e-9`.
pub fn log_value(mut grid: ValueGrid) -> Result<ValueGrid> {
    let theta = grid.theta;
    let mut psi = Vec::with_capacity(grid.phi.len());
    for (k, row) in grid.phi.iter().enumerate() {
        let mut out = Vec::with_capacity(row.len());
        for (i, &v) in row.iter().enumerate() {
            if !(v >= 1.0 - UNDERSHOOT_TOLERANCE) {
                return Err(Error::ValueBelowOne {
                    row: k,
                    state: i,
                    value: v,
                });
            }
            out.push(v.max(1.0).ln() / theta);
        }
        psi.push(out);
    }
    grid.psi = psi;
    Ok(grid)
}
