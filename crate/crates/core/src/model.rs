//! Finite controlled Markov chain models.
//!
//! A [`CtmdpModel`] holds, for every state `i` and action `a` in `U_i`, a row
//! of transition rates `λ_i·(a)`, a running cost `c(i, a) ≥ 0`, and a terminal
//! cost `g(i) ≥ 0`. The diagonal of every rate row is always the negated sum
//! of its off-diagonal entries, so generator rows sum to zero.
//!
//! State `0` is the reference state: hitting times and eigenfunction
//! normalization are taken relative to it.
//!
//! Models are loaded from a JSON document:
//!
//! ```json
//! {
//!   "n": 2,
//!   "actions": [["a", "b"], ["a"]],
//!   "rates": [
//!     {"a": [null, 1.0], "b": [-2.0, 2.0]},
//!     {"a": [1.0, null]}
//!   ],
//!   "cost": [{"a": 2.0, "b": 1.0}, {"a": 0.0}],
//!   "terminal": [1.0, 0.0]
//! }
//! ```
//!
//! A diagonal entry may be `null`, in which case it is recomputed. When it is
//! given it must agree with the off-diagonal sum to [`DIAGONAL_TOLERANCE`].
//! `terminal` defaults to zeros when absent.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum allowed deviation between a stated diagonal rate and the
/// negated off-diagonal sum.
pub const DIAGONAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelDocument {
    n: usize,
    actions: Vec<Vec<String>>,
    rates: Vec<BTreeMap<String, Vec<Option<f64>>>>,
    cost: Vec<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal: Option<Vec<f64>>,
}

/// A validated finite continuous-time Markov decision process.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmdpModel {
    actions: Vec<Vec<String>>,
    /// `rates[i][a][j]`, diagonal included.
    rates: Vec<Vec<Vec<f64>>>,
    cost: Vec<Vec<f64>>,
    terminal: Vec<f64>,
}

/// Global bounds and structural facts about a model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDiagnostics {
    /// Uniform rate bound `max_{i,a} -λ_ii(a)`.
    pub rate_bound: f64,
    /// `max_{i,a} c(i, a)`.
    pub cost_sup: f64,
    /// `max_i g(i)`.
    pub terminal_sup: f64,
    /// Largest absolute generator row sum.
    pub row_sum_err: f64,
    /// Whether every stationary policy yields an irreducible chain.
    pub irreducible_all: bool,
}

impl CtmdpModel {
    pub fn builder(n: usize) -> ModelBuilder {
        ModelBuilder::new(n)
    }

    /// Parses and validates a JSON model document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::from_document(doc)
    }

    /// Serializes to the JSON model document, diagonals included.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("model document serializes")
    }

    /// Serializes to a `serde_json::Value` for embedding in other documents.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_document()).expect("model document serializes")
    }

    fn to_document(&self) -> ModelDocument {
        let rates = self
            .actions
            .iter()
            .zip(&self.rates)
            .map(|(labels, rows)| {
                labels
                    .iter()
                    .cloned()
                    .zip(rows.iter().map(|r| r.iter().copied().map(Some).collect()))
                    .collect()
            })
            .collect();
        let cost = self
            .actions
            .iter()
            .zip(&self.cost)
            .map(|(labels, cs)| labels.iter().cloned().zip(cs.iter().copied()).collect())
            .collect();
        ModelDocument {
            n: self.n(),
            actions: self.actions.clone(),
            rates,
            cost,
            terminal: Some(self.terminal.clone()),
        }
    }

    fn from_document(doc: ModelDocument) -> Result<Self> {
        let n = doc.n;
        if n == 0 {
            return Err(Error::Dimension("n must be at least 1".into()));
        }
        if doc.actions.len() != n {
            return Err(Error::Dimension(format!(
                "actions lists {} states, n = {n}",
                doc.actions.len()
            )));
        }
        if doc.rates.len() != n || doc.cost.len() != n {
            return Err(Error::Dimension(format!(
                "rates lists {} states and cost lists {}, n = {n}",
                doc.rates.len(),
                doc.cost.len()
            )));
        }

        let mut rates = Vec::with_capacity(n);
        let mut cost = Vec::with_capacity(n);
        for (i, labels) in doc.actions.iter().enumerate() {
            if labels.is_empty() {
                return Err(Error::EmptyActions { state: i });
            }
            let mut seen = HashSet::new();
            for label in labels {
                if !seen.insert(label.as_str()) {
                    return Err(Error::DuplicateAction {
                        state: i,
                        label: label.clone(),
                    });
                }
            }
            for label in doc.rates[i].keys().chain(doc.cost[i].keys()) {
                if !seen.contains(label.as_str()) {
                    return Err(Error::Dimension(format!(
                        "state {i}: entry for undeclared action {label:?}"
                    )));
                }
            }

            let mut state_rates = Vec::with_capacity(labels.len());
            let mut state_cost = Vec::with_capacity(labels.len());
            for (a, label) in labels.iter().enumerate() {
                let row = doc.rates[i]
                    .get(label)
                    .ok_or_else(|| Error::MissingAction {
                        state: i,
                        label: label.clone(),
                    })?;
                state_rates.push(validate_row(i, a, n, row)?);

                let c = *doc.cost[i].get(label).ok_or_else(|| Error::MissingAction {
                    state: i,
                    label: label.clone(),
                })?;
                if !c.is_finite() {
                    return Err(Error::NonFiniteInput(format!(
                        "cost at (state {i}, action {a})"
                    )));
                }
                if c < 0.0 {
                    return Err(Error::NegativeCost {
                        state: i,
                        action: a,
                        value: c,
                    });
                }
                state_cost.push(c);
            }
            rates.push(state_rates);
            cost.push(state_cost);
        }

        let terminal = doc.terminal.unwrap_or_else(|| vec![0.0; n]);
        if terminal.len() != n {
            return Err(Error::Dimension(format!(
                "terminal has length {}, n = {n}",
                terminal.len()
            )));
        }
        for (i, &g) in terminal.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFiniteInput(format!("terminal cost at state {i}")));
            }
            if g < 0.0 {
                return Err(Error::NegativeTerminal { state: i, value: g });
            }
        }

        Ok(Self {
            actions: doc.actions,
            rates,
            cost,
            terminal,
        })
    }

    pub fn n(&self) -> usize {
        self.actions.len()
    }

    pub fn num_actions(&self, state: usize) -> usize {
        self.actions[state].len()
    }

    pub fn action_labels(&self, state: usize) -> &[String] {
        &self.actions[state]
    }

    pub fn action_index(&self, state: usize, label: &str) -> Option<usize> {
        self.actions[state].iter().position(|l| l == label)
    }

    /// Full rate row `λ_i·(a)`, diagonal included.
    pub fn rates(&self, state: usize, action: usize) -> &[f64] {
        &self.rates[state][action]
    }

    pub fn cost(&self, state: usize, action: usize) -> f64 {
        self.cost[state][action]
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    /// Exit rate `-λ_ii(a)`.
    pub fn exit_rate(&self, state: usize, action: usize) -> f64 {
        -self.rates[state][action][state]
    }

    /// Number of stationary policies, `Π_i |U_i|`.
    pub fn policy_count(&self) -> u128 {
        self.actions
            .iter()
            .map(|a| a.len() as u128)
            .fold(1u128, |acc, k| acc.saturating_mul(k))
    }

    pub fn rate_bound(&self) -> f64 {
        (0..self.n())
            .flat_map(|i| (0..self.num_actions(i)).map(move |a| (i, a)))
            .map(|(i, a)| self.exit_rate(i, a))
            .fold(0.0, f64::max)
    }

    pub fn cost_sup(&self) -> f64 {
        self.cost.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn terminal_sup(&self) -> f64 {
        self.terminal.iter().copied().fold(0.0, f64::max)
    }

    /// `weight · c(i, a) · v[i] + Σ_j λ_ij(a) v[j]`.
    ///
    /// This is the bracket minimized in every dynamic programming equation
    /// of the crate; `weight` is θ (or θ times a time-dependent multiplier).
    pub fn action_value(&self, state: usize, action: usize, weight: f64, v: &[f64]) -> f64 {
        let row = &self.rates[state][action];
        let mut acc = weight * self.cost[state][action] * v[state];
        for (rate, value) in row.iter().zip(v) {
            acc += rate * value;
        }
        acc
    }

    /// Minimum of [`action_value`](Self::action_value) over `U_i` and the
    /// minimizing action; ties go to the lowest action index.
    pub fn min_action_value(&self, state: usize, weight: f64, v: &[f64]) -> (f64, usize) {
        let mut best = (self.action_value(state, 0, weight, v), 0);
        for a in 1..self.num_actions(state) {
            let val = self.action_value(state, a, weight, v);
            if val < best.0 {
                best = (val, a);
            }
        }
        best
    }

    /// Checks that `policy` assigns a valid action to every state.
    pub fn check_policy(&self, policy: &[usize]) -> Result<()> {
        if policy.len() != self.n() {
            return Err(Error::Dimension(format!(
                "policy has length {}, n = {}",
                policy.len(),
                self.n()
            )));
        }
        for (i, &a) in policy.iter().enumerate() {
            if a >= self.num_actions(i) {
                return Err(Error::InvalidPolicy {
                    state: i,
                    action: a,
                });
            }
        }
        Ok(())
    }

    /// Generator matrix `Λᵘ` of a stationary policy.
    pub fn generator(&self, policy: &[usize]) -> Vec<Vec<f64>> {
        policy
            .iter()
            .enumerate()
            .map(|(i, &a)| self.rates[i][a].clone())
            .collect()
    }

    /// Whether the chain under `policy` is irreducible.
    pub fn is_irreducible_under(&self, policy: &[usize]) -> bool {
        let adj: Vec<Vec<usize>> = policy
            .iter()
            .enumerate()
            .map(|(i, &a)| support(&self.rates[i][a], i))
            .collect();
        strongly_connected(&adj)
    }

    /// Whether every stationary policy yields an irreducible chain.
    ///
    /// Some policy is reducible iff some proper nonempty set `C` is closable:
    /// every state of `C` has an action whose support stays inside `C`. For
    /// each excluded state `x`, the largest closable subset of `S \ {x}` is a
    /// greatest fixed point, obtained by repeatedly discarding states with no
    /// action confined to the current set.
    pub fn irreducible_all(&self) -> bool {
        let n = self.n();
        if n == 1 {
            return true;
        }
        for excluded in 0..n {
            let mut inside = vec![true; n];
            inside[excluded] = false;
            loop {
                let mut changed = false;
                for i in 0..n {
                    if !inside[i] {
                        continue;
                    }
                    let confined = self.rates[i]
                        .iter()
                        .any(|row| support(row, i).into_iter().all(|j| inside[j]));
                    if !confined {
                        inside[i] = false;
                        changed = true;
                    }
                }
                if !changed {
                    break;
                }
            }
            if inside.iter().any(|&b| b) {
                return false;
            }
        }
        true
    }

    /// Copy of the model restricted to one action per state.
    pub fn restrict(&self, policy: &[usize]) -> Result<Self> {
        self.check_policy(policy)?;
        Ok(Self {
            actions: policy
                .iter()
                .enumerate()
                .map(|(i, &a)| vec![self.actions[i][a].clone()])
                .collect(),
            rates: policy
                .iter()
                .enumerate()
                .map(|(i, &a)| vec![self.rates[i][a].clone()])
                .collect(),
            cost: policy
                .iter()
                .enumerate()
                .map(|(i, &a)| vec![self.cost[i][a]])
                .collect(),
            terminal: self.terminal.clone(),
        })
    }

    /// Copy of the model with running and terminal costs transformed.
    pub fn map_costs(
        &self,
        running: impl Fn(f64) -> f64,
        terminal: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let mut out = self.clone();
        for (i, cs) in out.cost.iter_mut().enumerate() {
            for (a, c) in cs.iter_mut().enumerate() {
                *c = running(*c);
                if !c.is_finite() || *c < 0.0 {
                    return Err(Error::NegativeCost {
                        state: i,
                        action: a,
                        value: *c,
                    });
                }
            }
        }
        for (i, g) in out.terminal.iter_mut().enumerate() {
            *g = terminal(*g);
            if !g.is_finite() || *g < 0.0 {
                return Err(Error::NegativeTerminal {
                    state: i,
                    value: *g,
                });
            }
        }
        Ok(out)
    }

    pub fn diagnostics(&self) -> ModelDiagnostics {
        validate(self)
    }
}

/// Computes the diagnostic report for a model. Never fails; reducible
/// models are reported through `irreducible_all`.
pub fn validate(model: &CtmdpModel) -> ModelDiagnostics {
    let row_sum_err = model
        .rates
        .iter()
        .flatten()
        .map(|row| row.iter().sum::<f64>().abs())
        .fold(0.0, f64::max);
    ModelDiagnostics {
        rate_bound: model.rate_bound(),
        cost_sup: model.cost_sup(),
        terminal_sup: model.terminal_sup(),
        row_sum_err,
        irreducible_all: model.irreducible_all(),
    }
}

/// Loads a model from its JSON document.
pub fn load_model(text: &str) -> Result<CtmdpModel> {
    CtmdpModel::from_json(text)
}

fn validate_row(state: usize, action: usize, n: usize, row: &[Option<f64>]) -> Result<Vec<f64>> {
    if row.len() != n {
        return Err(Error::Dimension(format!(
            "rate row at (state {state}, action {action}) has length {}, n = {n}",
            row.len()
        )));
    }
    let mut out = vec![0.0; n];
    let mut off_sum = 0.0;
    for (j, entry) in row.iter().enumerate() {
        if j == state {
            continue;
        }
        let r = entry.ok_or_else(|| {
            Error::Dimension(format!(
                "rate row at (state {state}, action {action}) omits off-diagonal entry {j}"
            ))
        })?;
        if !r.is_finite() {
            return Err(Error::NonFiniteInput(format!(
                "rate at (state {state}, action {action}, target {j})"
            )));
        }
        if r < 0.0 {
            return Err(Error::NegativeRate {
                state,
                action,
                target: j,
                value: r,
            });
        }
        out[j] = r;
        off_sum += r;
    }
    let expected = -off_sum;
    if let Some(given) = row[state] {
        if !given.is_finite() || (given - expected).abs() > DIAGONAL_TOLERANCE {
            return Err(Error::DiagonalMismatch {
                state,
                action,
                given,
                expected,
            });
        }
    }
    out[state] = expected;
    Ok(out)
}

fn support(row: &[f64], state: usize) -> Vec<usize> {
    row.iter()
        .enumerate()
        .filter(|&(j, &r)| j != state && r > 0.0)
        .map(|(j, _)| j)
        .collect()
}

fn reach_all(adj: &[Vec<usize>]) -> bool {
    let n = adj.len();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(i) = stack.pop() {
        for &j in &adj[i] {
            if !seen[j] {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    seen.into_iter().all(|b| b)
}

/// Strong connectivity of a directed graph given by adjacency lists.
pub(crate) fn strongly_connected(adj: &[Vec<usize>]) -> bool {
    if adj.len() <= 1 {
        return true;
    }
    let mut rev = vec![Vec::new(); adj.len()];
    for (i, out) in adj.iter().enumerate() {
        for &j in out {
            rev[j].push(i);
        }
    }
    reach_all(adj) && reach_all(&rev)
}

/// Incremental construction of a model through the same validation path as
/// documents.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    doc: ModelDocument,
}

impl ModelBuilder {
    fn new(n: usize) -> Self {
        Self {
            doc: ModelDocument {
                n,
                actions: vec![Vec::new(); n],
                rates: vec![BTreeMap::new(); n],
                cost: vec![BTreeMap::new(); n],
                terminal: None,
            },
        }
    }

    /// Adds action `label` to `state` with running cost `cost` and the given
    /// off-diagonal `(target, rate)` pairs.
    pub fn action(mut self, state: usize, label: &str, cost: f64, rates: &[(usize, f64)]) -> Self {
        let n = self.doc.n;
        let mut row = vec![Some(0.0); n];
        row[state] = None;
        for &(j, r) in rates {
            if j < n {
                row[j] = Some(r);
            }
        }
        self.doc.actions[state].push(label.to_string());
        self.doc.rates[state].insert(label.to_string(), row);
        self.doc.cost[state].insert(label.to_string(), cost);
        self
    }

    pub fn terminal(mut self, g: Vec<f64>) -> Self {
        self.doc.terminal = Some(g);
        self
    }

    pub fn build(self) -> Result<CtmdpModel> {
        CtmdpModel::from_document(self.doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances;

    #[test]
    fn single_state_document() {
        let m = load_model(
            r#"{"n": 1, "actions": [["only"]], "rates": [{"only": [0.0]}], "cost": [{"only": 2.0}]}"#,
        )
        .unwrap();
        assert_eq!(m.n(), 1);
        assert_eq!(m.rates(0, 0), &[0.0]);
        assert_eq!(m.cost(0, 0), 2.0);
        assert_eq!(m.terminal(), &[0.0]);
    }

    #[test]
    fn symmetric_two_state_has_unit_rate_bound() {
        let m = instances::two_state_symmetric(1.0);
        let d = validate(&m);
        assert_eq!(d.rate_bound, 1.0);
        assert_eq!(d.cost_sup, 1.0);
        assert!(d.row_sum_err <= 1e-12);
        assert!(d.irreducible_all);
    }

    #[test]
    fn negative_rate_names_indices() {
        let err = load_model(
            r#"{"n": 2, "actions": [["a"], ["a"]],
                "rates": [{"a": [null, -0.5]}, {"a": [1.0, null]}],
                "cost": [{"a": 1.0}, {"a": 1.0}]}"#,
        )
        .unwrap_err();
        match err {
            Error::NegativeRate {
                state,
                action,
                target,
                ..
            } => assert_eq!((state, action, target), (0, 0, 1)),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn absorbing_state_is_reducible() {
        let m = CtmdpModel::builder(2)
            .action(0, "a", 1.0, &[(1, 1.0)])
            .action(1, "a", 1.0, &[])
            .build()
            .unwrap();
        assert!(!validate(&m).irreducible_all);
        assert!(!m.is_irreducible_under(&[0, 0]));
    }

    #[test]
    fn desk_model_bounds() {
        let d = validate(&instances::desk_m2());
        assert_eq!(d.rate_bound, 2.0);
        assert_eq!(d.cost_sup, 2.0);
        assert!(d.irreducible_all);
    }

    #[test]
    fn one_policy_reducible_is_detected() {
        // Action "stay" in state 1 cuts the only way back to 0.
        let m = CtmdpModel::builder(3)
            .action(0, "a", 1.0, &[(1, 1.0)])
            .action(1, "go", 1.0, &[(2, 1.0)])
            .action(1, "stay", 1.0, &[(2, 1.0)])
            .action(2, "a", 1.0, &[(0, 1.0)])
            .action(2, "b", 1.0, &[(1, 1.0)])
            .build()
            .unwrap();
        assert!(m.is_irreducible_under(&[0, 0, 0]));
        assert!(!m.is_irreducible_under(&[0, 0, 1]));
        assert!(!m.irreducible_all());
    }

    #[test]
    fn diagonal_mismatch_rejected() {
        let err = load_model(
            r#"{"n": 2, "actions": [["a"], ["a"]],
                "rates": [{"a": [-0.9, 1.0]}, {"a": [1.0, -1.0]}],
                "cost": [{"a": 1.0}, {"a": 1.0}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DiagonalMismatch { state: 0, .. }));
    }

    #[test]
    fn structural_errors() {
        let empty = r#"{"n": 1, "actions": [[]], "rates": [{}], "cost": [{}]}"#;
        assert!(matches!(
            load_model(empty).unwrap_err(),
            Error::EmptyActions { state: 0 }
        ));
        let short = r#"{"n": 2, "actions": [["a"]], "rates": [{}], "cost": [{}]}"#;
        assert!(matches!(
            load_model(short).unwrap_err(),
            Error::Dimension(_)
        ));
        let neg_cost =
            r#"{"n": 1, "actions": [["a"]], "rates": [{"a": [null]}], "cost": [{"a": -1}]}"#;
        assert!(matches!(
            load_model(neg_cost).unwrap_err(),
            Error::NegativeCost { .. }
        ));
        assert!(matches!(
            load_model("not json").unwrap_err(),
            Error::Parse(_)
        ));
    }

    #[test]
    fn validate_is_pure() {
        let m = instances::desk_m2();
        assert_eq!(validate(&m), validate(&m));
    }

    #[test]
    fn json_round_trip_desk_model() {
        let m = instances::desk_m2();
        let back = load_model(&m.to_json()).unwrap();
        assert_eq!(m, back);
    }
}
