use proptest::prelude::*;

use riskctmc::instances::{random_irreducible, RandomSpec};
use riskctmc::{load_model, validate, CtmdpModel};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn document_round_trip_is_bit_exact(seed in any::<u64>()) {
        let m = random_irreducible(seed, RandomSpec::default());
        let back = load_model(&m.to_json()).unwrap();
        prop_assert_eq!(back.n(), m.n());
        for i in 0..m.n() {
            prop_assert_eq!(back.action_labels(i), m.action_labels(i));
            for a in 0..m.num_actions(i) {
                for (x, y) in back.rates(i, a).iter().zip(m.rates(i, a)) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
                prop_assert_eq!(back.cost(i, a).to_bits(), m.cost(i, a).to_bits());
            }
        }
        for (x, y) in back.terminal().iter().zip(m.terminal()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn loaded_rows_sum_to_zero(seed in any::<u64>()) {
        let m = random_irreducible(seed, RandomSpec { max_states: 6, ..RandomSpec::default() });
        let m = load_model(&m.to_json()).unwrap();
        prop_assert!(validate(&m).row_sum_err <= 1e-12);
    }

    #[test]
    fn diagnostics_are_pure(seed in any::<u64>()) {
        let m = random_irreducible(seed, RandomSpec::default());
        let a = serde_json::to_string(&validate(&m)).unwrap();
        let b = serde_json::to_string(&validate(&m)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn hand_written_document_with_diagonal() {
    let text = r#"{
        "n": 2,
        "actions": [["a", "b"], ["a"]],
        "rates": [
            {"a": [-1.0, 1.0], "b": [null, 2.0]},
            {"a": [1.0, -1.0]}
        ],
        "cost": [{"a": 2.0, "b": 1.0}, {"a": 0.0}],
        "terminal": [1.0, 0.0]
    }"#;
    let m: CtmdpModel = load_model(text).unwrap();
    assert_eq!(m.rates(0, 1), &[-2.0, 2.0]);
    assert_eq!(m.cost(0, 0), 2.0);
    let bad = text.replace("[-1.0, 1.0]", "[-1.5, 1.0]");
    assert!(load_model(&bad).is_err());
}
