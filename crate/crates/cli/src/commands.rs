use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use riskctmc::avg_eigen::search_certificate;
use riskctmc::hjb_discounted::solve_eps;
use riskctmc::hjb_finite::hjb_residual_report;
use riskctmc::policy_iter::policy_iteration_with_certificate;
use riskctmc::sim::{
    default_growth_horizon, growth_bias_bracket, mc_average_growth, mc_discounted_cost,
    mc_exp_hitting, mc_finite_cost, mc_poisson_h, truncation_time, DiscountHorizon,
    DiscountedPolicy,
};
use riskctmc::{
    brute_force_average, check_lyapunov, discounted_value, evaluate_policy, load_model,
    picard_solve, simulate, solve_finite_horizon, solve_limit, validate, CtmdpModel, ErrorKind,
    LyapunovCertificate, StationaryPolicy, StopRule,
};
use serde_json::{json, Value};

use crate::{
    AverageArgs, BruteForceArgs, Cli, Command, CrosscheckArgs, CrosscheckTarget, DiscountedArgs,
    EstimateArgs, FiniteArgs, Functional, LyapunovArgs, SimulateArgs, EXIT_CROSSCHECK,
    EXIT_NUMERICAL, EXIT_VALIDATION,
};

const DEFAULT_FINITE_HORIZON: f64 = 1.0;
const DEFAULT_TIME_STEPS: usize = 2000;
const DEFAULT_THETA_STEPS: usize = 10_000;
const DEFAULT_THETA_MAX: f64 = 0.9;
const DEFAULT_EPS: f64 = 1e-3;

#[derive(Debug)]
pub enum CliError {
    Core(riskctmc::Error),
    Io(String),
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.kind() == ErrorKind::Numerical => EXIT_NUMERICAL,
            _ => EXIT_VALIDATION,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) | CliError::Input(m) => f.write_str(m),
        }
    }
}

impl From<riskctmc::Error> for CliError {
    fn from(e: riskctmc::Error) -> Self {
        CliError::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Runs the command, writes its document and returns the exit code.
pub fn run(cli: &Cli, argv: &[String]) -> Result<u8> {
    let (result, passed) = match &cli.command {
        Command::Validate { model } => (cmd_validate(model)?, true),
        Command::SolveFinite(a) => (solve_finite(a)?, true),
        Command::SolveDiscounted(a) => (solve_discounted(a)?, true),
        Command::SolveAverage(a) => (solve_average(a)?, true),
        Command::BruteForce(a) => (brute_force(a)?, true),
        Command::Simulate(a) => (cmd_simulate(a)?, true),
        Command::Estimate(a) => (estimate(a)?, true),
        Command::CheckLyapunov(a) => (lyapunov(a)?, true),
        Command::Crosscheck(a) => {
            let r = crosscheck(a)?;
            let pass = r["pass"].as_bool().unwrap_or(false);
            (r, pass)
        }
    };
    let mut config = serde_json::to_value(cli).map_err(|e| CliError::Io(e.to_string()))?;
    config["argv"] = json!(argv);
    let doc = json!({
        "command": config["command"]["name"].clone(),
        "config": config,
        "result": result,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Io(e.to_string()))?;
    match &cli.output {
        Some(path) => fs::write(path, text + "\n")
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?,
        None => {
            let mut out = io::stdout().lock();
            if let Err(e) = writeln!(out, "{text}") {
                if e.kind() != io::ErrorKind::BrokenPipe {
                    return Err(CliError::Io(format!("cannot write to stdout: {e}")));
                }
            }
        }
    }
    Ok(if passed { 0 } else { EXIT_CROSSCHECK })
}

fn read_model(path: &Path) -> Result<CtmdpModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    Ok(load_model(&text)?)
}

fn read_certificate(path: &Path) -> Result<LyapunovCertificate> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("invalid certificate {}: {e}", path.display())))
}

fn parse_policy(model: &CtmdpModel, labels: &[String]) -> Result<StationaryPolicy> {
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    Ok(StationaryPolicy::from_labels(model, &refs)?)
}

fn labels(model: &CtmdpModel, policy: &[usize]) -> Vec<String> {
    policy
        .iter()
        .enumerate()
        .map(|(i, &a)| model.action_labels(i)[a].clone())
        .collect()
}

/// Every `stride`-th index of `0..len`, always ending at `len - 1`.
fn strided(len: usize, stride: usize) -> Vec<usize> {
    let mut rows: Vec<usize> = (0..len).step_by(stride.max(1)).collect();
    if len > 0 && rows.last() != Some(&(len - 1)) {
        rows.push(len - 1);
    }
    rows
}

fn pick<T: Clone>(xs: &[T], rows: &[usize]) -> Vec<T> {
    rows.iter().map(|&k| xs[k].clone()).collect()
}

fn check_start(model: &CtmdpModel, start: usize) -> Result<()> {
    if start < model.n() {
        Ok(())
    } else {
        Err(CliError::Input(format!(
            "start state {start} is not below n = {}",
            model.n()
        )))
    }
}

fn optimal_average(model: &CtmdpModel, theta: f64) -> Result<StationaryPolicy> {
    let sol =
        policy_iteration_with_certificate(model, theta, &StationaryPolicy::first(model), None)?;
    Ok(sol.policy)
}

fn stationary_or_optimal(
    model: &CtmdpModel,
    given: &Option<Vec<String>>,
    theta: f64,
) -> Result<StationaryPolicy> {
    match given {
        Some(l) => parse_policy(model, l),
        None => optimal_average(model, theta),
    }
}

fn cmd_validate(path: &Path) -> Result<Value> {
    let m = read_model(path)?;
    let actions: Vec<Vec<String>> = (0..m.n()).map(|i| m.action_labels(i).to_vec()).collect();
    Ok(json!({
        "n": m.n(),
        "actions": actions,
        "policy_count": m.policy_count().to_string(),
        "diagnostics": validate(&m),
    }))
}

fn solve_finite(a: &FiniteArgs) -> Result<Value> {
    let m = read_model(&a.model.model)?;
    let (grid, policy) = solve_finite_horizon(&m, a.theta, a.horizon, a.steps, None)?;
    let residual = hjb_residual_report(&m, &grid, &policy);
    let picard = if a.picard {
        let p = picard_solve(&m, a.theta, a.horizon, a.steps, None)?;
        let gap = p
            .grid
            .phi
            .iter()
            .flatten()
            .zip(grid.phi.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        json!({ "iterations": p.iterations, "final_gap": p.final_gap, "max_gap_vs_rk4": gap })
    } else {
        Value::Null
    };
    let rows = strided(grid.times.len(), a.stride);
    let actions: Vec<Vec<String>> = rows
        .iter()
        .map(|&k| labels(&m, &policy.actions[k]))
        .collect();
    Ok(json!({
        "theta": a.theta,
        "horizon": a.horizon,
        "steps": grid.steps(),
        "step_size": grid.step_size(),
        "initial_phi": grid.phi[0],
        "initial_psi": grid.psi[0],
        "times": pick(&grid.times, &rows),
        "phi": pick(&grid.phi, &rows),
        "psi": pick(&grid.psi, &rows),
        "policy": actions,
        "residual": residual,
        "picard": picard,
    }))
}

fn solve_discounted(a: &DiscountedArgs) -> Result<Value> {
    let m = read_model(&a.model.model)?;
    let limit = solve_limit(&m, a.alpha, a.theta_max, a.steps, &a.eps)?;
    let sol = &limit.solution;
    let value = discounted_value(sol, a.probe)?;
    let probe_row = sol.nearest_row(value.probe_theta)?;
    let bracket: Vec<[f64; 2]> = sol
        .limit_bracket(probe_row, m.cost_sup())
        .into_iter()
        .map(|(lo, hi)| [lo, hi])
        .collect();
    let rows = strided(sol.theta_grid.len(), a.stride);
    let actions: Vec<Vec<String>> = rows.iter().map(|&k| labels(&m, &sol.policy[k])).collect();
    Ok(json!({
        "alpha": a.alpha,
        "eps_sequence": limit.eps_sequence,
        "gaps": limit.gaps,
        "eps": sol.eps,
        "spacing": sol.spacing(),
        "boundary_factor": sol.boundary_factor(m.cost_sup()),
        "probe_theta": value.probe_theta,
        "probe_value": value.probe_values,
        "probe_w": sol.w[probe_row],
        "probe_limit_bracket": bracket,
        "theta_grid": pick(&sol.theta_grid, &rows),
        "w": pick(&sol.w, &rows),
        "valpha": pick(&value.valpha, &rows),
        "policy": actions,
    }))
}

fn trace_json(model: &CtmdpModel, entries: &[riskctmc::policy_iter::TraceEntry]) -> Value {
    entries
        .iter()
        .map(|e| json!({ "policy": labels(model, &e.policy), "rho": e.rho }))
        .collect()
}

fn solve_average(a: &AverageArgs) -> Result<Value> {
    let m = read_model(&a.model.model)?;
    let initial = match &a.initial {
        Some(l) => parse_policy(&m, l)?,
        None => StationaryPolicy::first(&m),
    };
    let cert = a.certificate.as_deref().map(read_certificate).transpose()?;
    let sol = policy_iteration_with_certificate(&m, a.theta, &initial, cert.as_ref())?;
    Ok(json!({
        "theta": sol.theta,
        "rho_star": sol.rho_star,
        "policy": labels(&m, &sol.policy),
        "h": sol.h,
        "iterations": sol.trace.len(),
        "trace": trace_json(&m, &sol.trace),
        "acdpe_residual": sol.acdpe_residual,
        "poisson_residual": sol.poisson_residual,
        "warnings": sol.warnings,
    }))
}

fn brute_force(a: &BruteForceArgs) -> Result<Value> {
    let m = read_model(&a.model.model)?;
    let bf = brute_force_average(&m, a.theta)?;
    let skipped: Vec<Vec<String>> = bf.skipped.iter().map(|p| labels(&m, p)).collect();
    Ok(json!({
        "theta": bf.theta,
        "rho_star": bf.rho_star,
        "policy": labels(&m, &bf.policy),
        "table": trace_json(&m, &bf.table),
        "skipped": skipped,
    }))
}

fn cmd_simulate(a: &SimulateArgs) -> Result<Value> {
    let m = read_model(&a.model.model)?;
    check_start(&m, a.start)?;
    let policy = match &a.policy {
        Some(l) => parse_policy(&m, l)?,
        None => StationaryPolicy::first(&m),
    };
    let stop = if a.hit_zero {
        StopRule::HitZero
    } else {
        StopRule::At(a.t_end)
    };
    let tr = simulate(&m, &policy, a.start, a.t0, stop, a.seed)?;
    let actions: Vec<String> = tr
        .states
        .iter()
        .zip(&tr.actions)
        .map(|(&s, &u)| m.action_labels(s)[u].clone())
        .collect();
    Ok(json!({
        "policy": labels(&m, &policy),
        "jumps": tr.states.len() - 1,
        "jump_times": tr.jump_times,
        "states": tr.states,
        "actions": actions,
        "end_time": tr.end_time,
        "final_state": tr.final_state,
    }))
}

fn to_value<T: serde::Serialize>(x: &T) -> Result<Value> {
    serde_json::to_value(x).map_err(|e| CliError::Io(e.to_string()))
}

fn estimate(a: &EstimateArgs) -> Result<Value> {
    let m = read_model(&a.model.model)?;
    check_start(&m, a.start)?;
    let given = match &a.policy {
        Some(l) => Some(parse_policy(&m, l)?),
        None => None,
    };
    match a.functional {
        Functional::Finite => {
            let horizon = a.horizon.unwrap_or(DEFAULT_FINITE_HORIZON);
            let steps = a.steps.unwrap_or(DEFAULT_TIME_STEPS);
            let (e, policy, solver) = match given {
                Some(p) => {
                    let e =
                        mc_finite_cost(&m, &p, a.theta, horizon, a.start, None, a.samples, a.seed)?;
                    (e, json!(labels(&m, &p)), Value::Null)
                }
                None => {
                    let (grid, p) = solve_finite_horizon(&m, a.theta, horizon, steps, None)?;
                    let e =
                        mc_finite_cost(&m, &p, a.theta, horizon, a.start, None, a.samples, a.seed)?;
                    (e, json!("optimal markov"), json!(grid.psi[0][a.start]))
                }
            };
            Ok(json!({ "estimate": e, "policy": policy, "solver_psi": solver }))
        }
        Functional::Discounted => {
            let horizon = match (a.eps, a.t_max) {
                (Some(eps), _) => DiscountHorizon::EpsBoundary { eps },
                (None, t_max) => DiscountHorizon::Truncated {
                    t_max: t_max.unwrap_or_else(|| {
                        truncation_time(a.theta, a.alpha, m.cost_sup(), a.max_bias)
                    }),
                    max_bias: a.max_bias,
                },
            };
            let (e, policy) = match given {
                Some(p) => {
                    let e = mc_discounted_cost(
                        &m, &p, a.theta, a.alpha, a.start, horizon, a.samples, a.seed,
                    )?;
                    (e, json!(labels(&m, &p)))
                }
                None => {
                    let eps = a.eps.unwrap_or(DEFAULT_EPS);
                    let steps = a.steps.unwrap_or(DEFAULT_THETA_STEPS);
                    let sol = solve_eps(&m, a.alpha, eps, a.theta.max(DEFAULT_THETA_MAX), steps)?;
                    let control = DiscountedPolicy::new(&sol, a.theta)?;
                    let e = mc_discounted_cost(
                        &m, &control, a.theta, a.alpha, a.start, horizon, a.samples, a.seed,
                    )?;
                    (e, json!("optimal discounted"))
                }
            };
            Ok(json!({ "estimate": e, "policy": policy, "horizon": to_value(&horizon)? }))
        }
        Functional::Growth => {
            let p = match given {
                Some(p) => p,
                None => optimal_average(&m, a.theta)?,
            };
            let horizon = a.horizon.unwrap_or_else(|| default_growth_horizon(&m));
            let e = mc_average_growth(&m, &p, a.theta, horizon, a.start, a.samples, a.seed)?;
            let rho = evaluate_policy(&m, &p, a.theta).ok().map(|ev| ev.rho);
            Ok(json!({ "estimate": e, "policy": labels(&m, &p), "horizon": horizon, "rho": rho }))
        }
        Functional::Hitting => {
            let p = stationary_or_optimal(&m, &a.policy, a.theta)?;
            let cert = a.certificate.as_deref().map(read_certificate).transpose()?;
            let e = mc_exp_hitting(&m, &p, a.eta, a.start, cert.as_ref(), a.samples, a.seed)?;
            Ok(json!({ "estimate": e, "policy": labels(&m, &p) }))
        }
        Functional::Poisson => {
            let p = stationary_or_optimal(&m, &a.policy, a.theta)?;
            let eval = evaluate_policy(&m, &p, a.theta)?;
            let rho = a.rho.unwrap_or(eval.rho);
            let e = mc_poisson_h(&m, &p, a.theta, rho, a.start, a.samples, a.seed)?;
            Ok(json!({
                "estimate": e,
                "policy": labels(&m, &p),
                "rho": rho,
                "eigenvector_h": eval.h[a.start],
            }))
        }
    }
}

fn lyapunov(a: &LyapunovArgs) -> Result<Value> {
    let m = read_model(&a.model.model)?;
    let cert = match &a.certificate {
        Some(path) => Some(read_certificate(path)?),
        None => {
            let levels = a
                .levels
                .clone()
                .unwrap_or_else(|| (1..=40).map(|k| 0.25 * k as f64).collect());
            search_certificate(&m, &levels)
        }
    };
    let report = match &cert {
        Some(c) => Some(check_lyapunov(&m, c, a.theta)?),
        None => None,
    };
    Ok(json!({
        "searched": a.certificate.is_none(),
        "certificate": cert,
        "report": report,
    }))
}

fn crosscheck(a: &CrosscheckArgs) -> Result<Value> {
    let m = read_model(&a.model.model)?;
    let k = a.se_multiple;
    let mut checks = Vec::new();
    match a.target {
        CrosscheckTarget::Finite => {
            let horizon = a.horizon.unwrap_or(DEFAULT_FINITE_HORIZON);
            let steps = a.steps.unwrap_or(DEFAULT_TIME_STEPS);
            let (grid, policy) = solve_finite_horizon(&m, a.theta, horizon, steps, None)?;
            for i in 0..m.n() {
                let e = mc_finite_cost(&m, &policy, a.theta, horizon, i, None, a.samples, a.seed)?;
                let target = grid.psi[0][i];
                let z = z_score(e.certainty_equivalent - target, e.ce_std_error);
                checks.push(json!({
                    "state": i,
                    "solver_psi": target,
                    "mc_certainty_equivalent": e.certainty_equivalent,
                    "mc_std_error": e.ce_std_error,
                    "z": z,
                    "pass": z <= k,
                }));
            }
        }
        CrosscheckTarget::Discounted => {
            let steps = a.steps.unwrap_or(DEFAULT_THETA_STEPS);
            let sol = solve_eps(&m, a.alpha, a.eps, a.theta.max(DEFAULT_THETA_MAX), steps)?;
            let row = sol.nearest_row(a.theta)?;
            let control = DiscountedPolicy::new(&sol, a.theta)?;
            let bracket = sol.limit_bracket(row, m.cost_sup());
            let max_bias = riskctmc::sim::DEFAULT_TRUNCATION_BIAS;
            let t_max = truncation_time(a.theta, a.alpha, m.cost_sup(), max_bias);
            for (i, &(lo, hi)) in bracket.iter().enumerate() {
                let exact = DiscountHorizon::EpsBoundary { eps: a.eps };
                let e = mc_discounted_cost(
                    &m, &control, a.theta, a.alpha, i, exact, a.samples, a.seed,
                )?;
                let z = z_score(e.mean - sol.w[row][i], e.std_error);
                checks.push(json!({
                    "state": i,
                    "kind": "eps-boundary",
                    "solver_w": sol.w[row][i],
                    "mc_mean": e.mean,
                    "mc_std_error": e.std_error,
                    "z": z,
                    "pass": z <= k,
                }));

                let truncated = DiscountHorizon::Truncated { t_max, max_bias };
                let e = mc_discounted_cost(
                    &m,
                    &control,
                    a.theta,
                    a.alpha,
                    i,
                    truncated,
                    a.samples,
                    a.seed.wrapping_add(1),
                )?;
                let outside = (lo - e.mean).max(e.mean - hi).max(0.0);
                let allowance = k * e.std_error + e.bias_bound.unwrap_or(0.0) * e.mean;
                checks.push(json!({
                    "state": i,
                    "kind": "limit-bracket",
                    "bracket": [lo, hi],
                    "t_max": t_max,
                    "mc_mean": e.mean,
                    "mc_std_error": e.std_error,
                    "excess": outside - allowance,
                    "pass": outside <= allowance,
                }));
            }
        }
        CrosscheckTarget::Average => {
            let bf = brute_force_average(&m, a.theta)?;
            let pi =
                policy_iteration_with_certificate(&m, a.theta, &StationaryPolicy::first(&m), None)?;
            let gap = (pi.rho_star - bf.rho_star).abs();
            checks.push(json!({
                "kind": "enumeration",
                "policy_iteration_rho": pi.rho_star,
                "policy_iteration_policy": labels(&m, &pi.policy),
                "brute_force_rho": bf.rho_star,
                "brute_force_policy": labels(&m, &bf.policy),
                "gap": gap,
                "pass": gap <= a.tolerance,
            }));
            let horizon = a
                .horizon
                .unwrap_or_else(|| default_growth_horizon(&m) / 10.0);
            let eval = evaluate_policy(&m, &pi.policy, a.theta)?;
            for i in 0..m.n() {
                let e = mc_average_growth(&m, &pi.policy, a.theta, horizon, i, a.samples, a.seed)?;
                let (lo, hi) = growth_bias_bracket(&eval.h, i, a.theta, horizon);
                let d = e.certainty_equivalent - eval.rho;
                let outside = (lo - d).max(d - hi).max(0.0);
                let allowance = k * e.ce_std_error;
                checks.push(json!({
                    "state": i,
                    "kind": "growth",
                    "horizon": horizon,
                    "rho": eval.rho,
                    "mc_growth": e.certainty_equivalent,
                    "mc_std_error": e.ce_std_error,
                    "bias_bracket": [lo, hi],
                    "excess": outside - allowance,
                    "pass": outside <= allowance,
                }));
            }
        }
    }
    let pass = checks.iter().all(|c| c["pass"].as_bool() == Some(true));
    Ok(json!({ "pass": pass, "se_multiple": k, "checks": checks }))
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff.abs() / se
    } else if diff.abs() <= 1e-12 * (1.0 + diff.abs()) {
        0.0
    } else {
        f64::INFINITY
    }
}
