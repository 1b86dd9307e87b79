use proptest::prelude::*;

use riskctmc::instances::{
    desk_m2, random_irreducible, single_state, two_state_symmetric, RandomSpec,
};
use riskctmc::sim::{
    mc_average_growth, mc_discounted_cost, mc_exp_hitting, mc_finite_cost, mc_poisson_h, simulate,
    truncation_time, DiscountHorizon, StopRule,
};
use riskctmc::{solve_finite_horizon, StationaryPolicy};

fn check_trajectory(
    tr: &riskctmc::Trajectory,
    start: usize,
    t0: f64,
) -> std::result::Result<(), TestCaseError> {
    prop_assert_eq!(tr.states[0], start);
    prop_assert_eq!(tr.jump_times[0], t0);
    prop_assert_eq!(tr.states.len(), tr.jump_times.len());
    prop_assert_eq!(tr.actions.len(), tr.states.len());
    for pair in tr.states.windows(2) {
        prop_assert_ne!(pair[0], pair[1]);
    }
    for s in tr.sojourns().take(tr.states.len() - 1) {
        prop_assert!(s > 0.0);
    }
    prop_assert!(tr.end_time >= *tr.jump_times.last().unwrap());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn sampled_paths_are_valid(seed in any::<u64>()) {
        let m = random_irreducible(seed, RandomSpec::default());
        let p = StationaryPolicy::first(&m);
        for k in 0..10_000u64 {
            let start = (k % m.n() as u64) as usize;
            let tr = simulate(&m, &p, start, 0.25, StopRule::At(3.0), seed ^ k).unwrap();
            check_trajectory(&tr, start, 0.25)?;
            prop_assert_eq!(tr.end_time, 3.0);
            prop_assert_eq!(tr.final_state, *tr.states.last().unwrap());
        }
        for k in 0..1_000u64 {
            let start = 1 + (k % (m.n() as u64 - 1)) as usize;
            let tr = simulate(&m, &p, start, 0.0, StopRule::HitZero, seed ^ k).unwrap();
            check_trajectory(&tr, start, 0.0)?;
            prop_assert_eq!(tr.final_state, 0);
            prop_assert!(!tr.states.contains(&0));
        }
    }
}

fn z(mean: f64, se: f64, target: f64) -> f64 {
    (mean - target).abs() / se
}

#[test]
fn exponential_sojourns_have_unit_mean() {
    let m = two_state_symmetric(1.0);
    let p = StationaryPolicy::first(&m);
    let tr = simulate(&m, &p, 0, 0.0, StopRule::At(2e5), 3).unwrap();
    let s: Vec<f64> = tr.sojourns().take(100_000).collect();
    assert_eq!(s.len(), 100_000);
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let sd = (s.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(z(mean, sd / n.sqrt(), 1.0) <= 3.0);
}

#[test]
fn hitting_time_of_symmetric_chain_is_unit_exponential() {
    let m = two_state_symmetric(1.0);
    let p = StationaryPolicy::first(&m);
    let taus: Vec<f64> = (0..100_000)
        .map(|s| {
            simulate(&m, &p, 1, 0.0, StopRule::HitZero, s)
                .unwrap()
                .end_time
        })
        .collect();
    let n = taus.len() as f64;
    let mean = taus.iter().sum::<f64>() / n;
    let sd = (taus.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(z(mean, sd / n.sqrt(), 1.0) <= 3.0);
}

#[test]
fn degenerate_cases_have_zero_variance() {
    let one = single_state(2.0, 1.0);
    let p1 = StationaryPolicy::first(&one);
    let e = mc_finite_cost(&one, &p1, 0.5, 1.0, 0, None, 1000, 1).unwrap();
    assert_eq!(e.std_error, 0.0);
    assert!((e.mean - 1.5f64.exp()).abs() <= 1e-12);

    let unit = single_state(1.0, 0.0);
    let t_max = truncation_time(0.5, 1.0, 1.0, 1e-4);
    let horizon = DiscountHorizon::Truncated {
        t_max,
        max_bias: 1e-4,
    };
    let e = mc_discounted_cost(&unit, &p1, 0.5, 1.0, 0, horizon, 1000, 1).unwrap();
    assert_eq!(e.std_error, 0.0);
    assert!((e.mean - (0.5 * (1.0 - (-t_max).exp())).exp()).abs() <= 1e-12);
    assert!((e.mean - 0.5f64.exp()).abs() <= e.bias_bound.unwrap() * 0.5f64.exp());

    let flat = two_state_symmetric(1.3);
    let p2 = StationaryPolicy::first(&flat);
    let e = mc_average_growth(&flat, &p2, 0.5, 50.0, 1, 1000, 1).unwrap();
    assert!(e.ce_std_error <= 1e-14);
    assert!((e.certainty_equivalent - 1.3).abs() <= 1e-12);
    let e = mc_poisson_h(&flat, &p2, 0.5, 1.3, 1, 1000, 1).unwrap();
    assert_eq!(e.std_error, 0.0);
    assert!((e.mean - 1.0).abs() <= 1e-12);
    let e = mc_exp_hitting(&flat, &p2, 0.0, 1, None, 1000, 1).unwrap();
    assert_eq!(e.estimate.mean, 1.0);

    let zero = desk_m2().map_costs(|_| 0.0, |_| 0.0).unwrap();
    let e = mc_finite_cost(
        &zero,
        &StationaryPolicy(vec![1, 0]),
        0.5,
        2.0,
        0,
        None,
        1000,
        1,
    )
    .unwrap();
    assert_eq!((e.mean, e.std_error), (1.0, 0.0));
}

#[test]
fn estimates_are_reproducible_across_thread_counts() {
    let m = desk_m2();
    let (_, policy) = solve_finite_horizon(&m, 0.5, 2.0, 2000, None).unwrap();
    let run = || mc_finite_cost(&m, &policy, 0.5, 2.0, 0, None, 20_000, 11).unwrap();
    let a = run();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(run);
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    let c = mc_finite_cost(&m, &policy, 0.5, 2.0, 0, None, 20_000, 12).unwrap();
    assert_ne!(a.mean, c.mean);
}

#[test]
fn standard_error_halves_when_samples_quadruple() {
    let m = desk_m2();
    let p = StationaryPolicy(vec![0, 0]);
    let small = mc_finite_cost(&m, &p, 0.5, 2.0, 0, None, 25_000, 5).unwrap();
    let large = mc_finite_cost(&m, &p, 0.5, 2.0, 0, None, 100_000, 5).unwrap();
    let ratio = small.std_error / large.std_error;
    assert!((ratio / 2.0 - 1.0).abs() <= 0.2, "ratio {ratio}");
}

#[test]
fn poisson_representation_matches_eigenvector() {
    let m = desk_m2();
    let p = StationaryPolicy(vec![0, 0]);
    let eval = riskctmc::evaluate_policy(&m, &p, 0.5).unwrap();
    let e = mc_poisson_h(&m, &p, 0.5, eval.rho, 1, 100_000, 9).unwrap();
    assert!(z(e.mean, e.std_error, eval.h[1]) <= 3.0);
}
