//! Exact jump-chain simulation of a controlled chain.
//!
//! In state `i` under action `a` the sojourn is exponential with rate
//! `−λ_ii(a)` and the next state is `j` with probability `λ_ij(a)/(−λ_ii(a))`.
//! The action is read from the policy at each jump time and held until the
//! next jump.

mod estimators;

pub use estimators::*;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;

use crate::avg_eigen::StationaryPolicy;
use crate::error::{Error, Result};
use crate::hjb_discounted::DiscountedSolution;
use crate::hjb_finite::MarkovPolicy;
use crate::model::CtmdpModel;

/// Scale of the non-termination guard: stop-at-zero runs abort past
/// `NON_TERMINATION_SCALE / M`.
pub const NON_TERMINATION_SCALE: f64 = 1e6;

/// Anything that chooses an action from `(t, state)`.
pub trait ActionSource: Sync {
    fn action(&self, t: f64, state: usize) -> usize;

    /// Checks that every action the source can return exists in the model.
    fn check(&self, model: &CtmdpModel) -> Result<()>;

    /// Latest time the source is defined at, if bounded.
    fn horizon(&self) -> Option<f64> {
        None
    }
}

impl ActionSource for StationaryPolicy {
    fn action(&self, _t: f64, state: usize) -> usize {
        self.0[state]
    }

    fn check(&self, model: &CtmdpModel) -> Result<()> {
        model.check_policy(self)
    }
}

impl ActionSource for MarkovPolicy {
    fn action(&self, t: f64, state: usize) -> usize {
        self.action_at(t, state)
    }

    fn check(&self, model: &CtmdpModel) -> Result<()> {
        if self.actions.len() != self.times.len() || self.times.is_empty() {
            return Err(Error::Dimension(
                "Markov policy rows do not match its grid".into(),
            ));
        }
        self.actions
            .iter()
            .try_for_each(|row| model.check_policy(row))
    }

    fn horizon(&self) -> Option<f64> {
        self.times.last().copied()
    }
}

/// Time-dependent optimal control of the discounted problem: at time `t`
/// the minimizer at risk parameter `θ e^{−αt}`. Below the grid the first
/// row is used.
#[derive(Debug, Clone, Copy)]
pub struct DiscountedPolicy<'a> {
    pub solution: &'a DiscountedSolution,
    pub theta: f64,
}

impl<'a> DiscountedPolicy<'a> {
    pub fn new(solution: &'a DiscountedSolution, theta: f64) -> Result<Self> {
        solution.nearest_row(theta)?;
        Ok(Self { solution, theta })
    }

    fn row(&self, t: f64) -> usize {
        let sol = self.solution;
        let lookup = self.theta * (-sol.alpha * t).exp();
        let h = sol.spacing();
        if h == 0.0 {
            return 0;
        }
        let k = ((lookup - sol.theta_grid[0]) / h).round();
        (k.max(0.0) as usize).min(sol.theta_grid.len() - 1)
    }
}

impl ActionSource for DiscountedPolicy<'_> {
    fn action(&self, t: f64, state: usize) -> usize {
        self.solution.policy[self.row(t)][state]
    }

    fn check(&self, model: &CtmdpModel) -> Result<()> {
        self.solution
            .policy
            .iter()
            .try_for_each(|row| model.check_policy(row))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    /// Run until the given time.
    At(f64),
    /// Run until the first entrance to state 0 after the start (from state
    /// 0 itself: the first return after leaving).
    HitZero,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// Start of each sojourn, beginning with `t0`.
    pub jump_times: Vec<f64>,
    pub states: Vec<usize>,
    /// Action held during each sojourn.
    pub actions: Vec<usize>,
    pub end_time: f64,
    /// State at `end_time`; 0 for stop-at-zero runs.
    pub final_state: usize,
}

impl Trajectory {
    pub fn sojourns(&self) -> impl Iterator<Item = f64> + '_ {
        self.jump_times
            .iter()
            .zip(
                self.jump_times
                    .iter()
                    .skip(1)
                    .chain(std::iter::once(&self.end_time)),
            )
            .map(|(a, b)| b - a)
    }
}

/// Independent stream for trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Where a walk ended.
#[derive(Debug, Clone, Copy)]
pub(crate) struct WalkEnd {
    pub time: f64,
    pub state: usize,
}

pub(crate) fn check_walk(
    model: &CtmdpModel,
    policy: &dyn ActionSource,
    start: usize,
    t0: f64,
    stop: StopRule,
) -> Result<()> {
    if start >= model.n() {
        return Err(Error::Dimension(format!(
            "start state {start} out of range, n = {}",
            model.n()
        )));
    }
    if !t0.is_finite() {
        return Err(Error::InvalidParameter("t0 must be finite".into()));
    }
    if let StopRule::At(t_end) = stop {
        if !(t_end.is_finite() && t_end >= t0) {
            return Err(Error::InvalidParameter(format!(
                "need finite t_end >= t0, got t_end = {t_end}"
            )));
        }
        if let Some(h) = policy.horizon() {
            if h < t_end - 1e-9 * t_end.abs().max(1.0) {
                return Err(Error::InvalidParameter(format!(
                    "policy grid ends at {h}, before t_end = {t_end}"
                )));
            }
        }
    }
    policy.check(model)
}

/// Core sampler. `visit(state, action, from, to)` is called once per
/// completed or truncated sojourn. Inputs are assumed checked.
pub(crate) fn walk<R: Rng>(
    model: &CtmdpModel,
    policy: &dyn ActionSource,
    start: usize,
    t0: f64,
    stop: StopRule,
    rng: &mut R,
    mut visit: impl FnMut(usize, usize, f64, f64),
) -> Result<WalkEnd> {
    let guard = t0 + NON_TERMINATION_SCALE / model.rate_bound();
    let mut t = t0;
    let mut state = start;
    loop {
        let action = policy.action(t, state);
        let q = model.exit_rate(state, action);
        if q <= 0.0 {
            return match stop {
                StopRule::At(t_end) => {
                    visit(state, action, t, t_end);
                    Ok(WalkEnd { time: t_end, state })
                }
                StopRule::HitZero => Err(Error::AbsorbingState { state, t }),
            };
        }
        let dt = Exp::new(q).expect("positive rate").sample(rng);
        let next_t = t + dt;
        if let StopRule::At(t_end) = stop {
            if next_t >= t_end {
                visit(state, action, t, t_end);
                return Ok(WalkEnd { time: t_end, state });
            }
        } else if next_t > guard {
            return Err(Error::NonTermination { t: next_t, guard });
        }
        visit(state, action, t, next_t);

        let rates = model.rates(state, action);
        let target = rng.random::<f64>() * q;
        let mut acc = 0.0;
        let mut next = state;
        for (j, &r) in rates.iter().enumerate() {
            if j == state || r <= 0.0 {
                continue;
            }
            acc += r;
            next = j;
            if target < acc {
                break;
            }
        }
        t = next_t;
        state = next;
        if stop == StopRule::HitZero && state == 0 {
            return Ok(WalkEnd { time: t, state });
        }
    }
}

/// Samples one trajectory from `start` at `t0`.
pub fn simulate(
    model: &CtmdpModel,
    policy: &dyn ActionSource,
    start: usize,
    t0: f64,
    stop: StopRule,
    seed: u64,
) -> Result<Trajectory> {
    check_walk(model, policy, start, t0, stop)?;
    let mut rng = trajectory_rng(seed, 0);
    let mut jump_times = Vec::new();
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let end = walk(model, policy, start, t0, stop, &mut rng, |s, a, from, _| {
        jump_times.push(from);
        states.push(s);
        actions.push(a);
    })?;
    Ok(Trajectory {
        jump_times,
        states,
        actions,
        end_time: end.time,
        final_state: end.state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn single_state_has_one_sojourn() {
        let m = instances::single_state(1.0, 0.0);
        let p = StationaryPolicy::first(&m);
        let tr = simulate(&m, &p, 0, 0.5, StopRule::At(3.0), 1).unwrap();
        assert_eq!(tr.jump_times, vec![0.5]);
        assert_eq!(tr.states, vec![0]);
        assert_eq!(tr.end_time, 3.0);
        assert!(matches!(
            simulate(&m, &p, 0, 0.0, StopRule::HitZero, 1).unwrap_err(),
            Error::AbsorbingState { .. }
        ));
    }

    #[test]
    fn hit_zero_ends_in_zero() {
        let m = instances::desk_m2();
        let p = StationaryPolicy(vec![1, 0]);
        for seed in 0..50 {
            let tr = simulate(&m, &p, 1, 0.0, StopRule::HitZero, seed).unwrap();
            assert_eq!(tr.final_state, 0);
            assert_eq!(tr.states, vec![1]);
            let from0 = simulate(&m, &p, 0, 0.0, StopRule::HitZero, seed).unwrap();
            assert_eq!(from0.states, vec![0, 1]);
        }
    }

    #[test]
    fn markov_policy_grid_must_cover_horizon() {
        let m = instances::desk_m2();
        let p = MarkovPolicy {
            times: vec![0.0, 1.0],
            actions: vec![vec![0, 0], vec![1, 0]],
        };
        assert!(simulate(&m, &p, 0, 0.0, StopRule::At(1.0), 0).is_ok());
        assert!(simulate(&m, &p, 0, 0.0, StopRule::At(2.0), 0).is_err());
        let bad = MarkovPolicy {
            times: vec![0.0, 1.0],
            actions: vec![vec![0, 0], vec![0, 1]],
        };
        assert!(simulate(&m, &bad, 0, 0.0, StopRule::At(1.0), 0).is_err());
    }

    #[test]
    fn seeded_runs_repeat() {
        let m = instances::desk_m2();
        let p = StationaryPolicy(vec![0, 0]);
        let a = simulate(&m, &p, 0, 0.0, StopRule::At(20.0), 42).unwrap();
        let b = simulate(&m, &p, 0, 0.0, StopRule::At(20.0), 42).unwrap();
        let c = simulate(&m, &p, 0, 0.0, StopRule::At(20.0), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
