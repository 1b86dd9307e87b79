use proptest::prelude::*;

use riskctmc::hjb_discounted::{cauchy_gaps, check_gaps_decreasing, discounted_value, solve_eps};
use riskctmc::instances::{random_irreducible, random_suite, single_state, RandomSpec};

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(12)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn values_within_global_bounds(seed in any::<u64>(), alpha in 0.5f64..2.0) {
        let m = random_irreducible(seed, RandomSpec::default());
        let sol = solve_eps(&m, alpha, 1e-2, 0.9, 10_000).unwrap();
        let upper = (m.cost_sup() / alpha).exp();
        prop_assert!(sol.w[0].iter().all(|&v| v == (1e-2 * m.cost_sup() / alpha).exp()));
        for row in &sol.w {
            for &v in row {
                prop_assert!(v >= 1.0 && v <= upper * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn value_rows_grow_with_theta(seed in any::<u64>()) {
        let m = random_irreducible(seed, RandomSpec::default());
        let sol = solve_eps(&m, 1.0, 1e-2, 0.9, 10_000).unwrap();
        let v = discounted_value(&sol, None).unwrap();
        // The limit lies in [V_ε − ε‖c‖/(αθ), V_ε] and is nondecreasing.
        for (k, pair) in v.valpha.windows(2).enumerate() {
            let offset = sol.eps * m.cost_sup() / (sol.alpha * v.theta_grid[k]);
            for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                prop_assert!(*hi >= lo - offset - 1e-6);
            }
        }
    }

    #[test]
    fn single_state_matches_closed_form(c0 in 0.0f64..2.0, alpha in 0.5f64..2.0) {
        let m = single_state(c0, 0.0);
        let sol = solve_eps(&m, alpha, 1e-3, 0.9, 10_000).unwrap();
        for (theta, row) in sol.theta_grid.iter().zip(&sol.w) {
            prop_assert!((row[0] - (theta * c0 / alpha).exp()).abs() <= 1e-8);
        }
    }
}

#[test]
fn halving_gaps_shrink_on_random_suite() {
    for m in random_suite(1000, 10, RandomSpec::default()) {
        let sols: Vec<_> = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
            .iter()
            .map(|&eps| solve_eps(&m, 1.0, eps, 0.9, 10_000).unwrap())
            .collect();
        let gaps = cauchy_gaps(&sols, 0.1, 0.9).unwrap();
        check_gaps_decreasing(&gaps).unwrap();
        for pair in gaps.windows(2) {
            assert!(pair[0] <= 10.0 * pair[1], "{gaps:?}");
        }
    }
}
