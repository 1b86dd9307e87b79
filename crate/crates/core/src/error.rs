use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Broad classification used by callers that map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input: malformed documents, invalid models or parameters.
    Validation,
    /// A solver or estimator failed on otherwise valid input.
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to parse model document: {0}")]
    Parse(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("state {state} has an empty action set")]
    EmptyActions { state: usize },

    #[error("state {state}: duplicate action label {label:?}")]
    DuplicateAction { state: usize, label: String },

    #[error("state {state}: no entry for action {label:?}")]
    MissingAction { state: usize, label: String },

    #[error("negative rate {value} at (state {state}, action {action}, target {target})")]
    NegativeRate {
        state: usize,
        action: usize,
        target: usize,
        value: f64,
    },

    #[error(
        "diagonal rate at (state {state}, action {action}) is {given}, expected {expected} \
         from the off-diagonal sum"
    )]
    DiagonalMismatch {
        state: usize,
        action: usize,
        given: f64,
        expected: f64,
    },

    #[error("negative running cost {value} at (state {state}, action {action})")]
    NegativeCost {
        state: usize,
        action: usize,
        value: f64,
    },

    #[error("negative terminal cost {value} at state {state}")]
    NegativeTerminal { state: usize, value: f64 },

    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("action index {action} is not valid for state {state}")]
    InvalidPolicy { state: usize, action: usize },

    #[error("step size {step} violates the stability guard: step * {lipschitz} = {product} >= 1")]
    StabilityGuard {
        step: f64,
        lipschitz: f64,
        product: f64,
    },

    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    #[error(
        "value {value} at grid row {row} (t = {t}), state {state} undershoots 1 beyond tolerance"
    )]
    Undershoot {
        row: usize,
        t: f64,
        state: usize,
        value: f64,
    },

    #[error("exponential value {value} < 1 at row {row}, state {state}")]
    ValueBelowOne {
        row: usize,
        state: usize,
        value: f64,
    },

    #[error("Picard iteration did not converge in {iterations} iterations (last gap {gap:e})")]
    PicardNoConvergence { iterations: usize, gap: f64 },

    #[error("Cauchy gap sequence not decreasing at index {index}: {prev:e} -> {next:e}")]
    CauchyGapIncrease { index: usize, prev: f64, next: f64 },

    #[error("lookup theta {theta} lies outside the solved range [{lo}, {hi}]")]
    ThetaOutOfRange { theta: f64, lo: f64, hi: f64 },

    #[error("policy {policy:?} is reducible (support graph not strongly connected)")]
    Reducible { policy: Vec<usize> },

    #[error("matrix support graph is not strongly connected")]
    ReducibleMatrix,

    #[error(
        "power iteration did not converge in {iterations} iterations \
         (last change {change:e}, ratio estimate {ratio_estimate})"
    )]
    EigenNoConvergence {
        iterations: usize,
        change: f64,
        ratio_estimate: f64,
    },

    #[error("eigenvector component at the reference state underflowed ({value:e})")]
    EigenUnderflow { value: f64 },

    #[error("growth rate increased at iteration {iteration}: {prev} -> {next}")]
    RhoIncreased {
        iteration: usize,
        prev: f64,
        next: f64,
    },

    #[error("policy changed at iteration {iteration} but rho decreased only by {decrease:e}")]
    StalledImprovement { iteration: usize, decrease: f64 },

    #[error("policy iteration exceeded {cap} iterations")]
    IterationCap { cap: usize },

    #[error("{count} stationary policies exceed the enumeration guard of {limit}")]
    EnumerationGuard { count: u128, limit: u128 },

    #[error("trajectory did not hit state 0 by t = {t} (guard {guard})")]
    NonTermination { t: f64, guard: f64 },

    #[error("absorbing state {state} reached at t = {t} before hitting state 0")]
    AbsorbingState { state: usize, t: f64 },

    #[error("Lyapunov exponent difference {value} overflows (max safe magnitude {max_safe})")]
    LyapunovOverflow { value: f64, max_safe: f64 },

    #[error("truncation time {t_max} is below the {required} needed for bias bound {bias}")]
    TruncationTooShort {
        t_max: f64,
        required: f64,
        bias: f64,
    },
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use Error::*;
        match self {
            Parse(_)
            | Dimension(_)
            | EmptyActions { .. }
            | DuplicateAction { .. }
            | MissingAction { .. }
            | NegativeRate { .. }
            | DiagonalMismatch { .. }
            | NegativeCost { .. }
            | NegativeTerminal { .. }
            | NonFiniteInput(_)
            | InvalidParameter(_)
            | InvalidPolicy { .. }
            | StabilityGuard { .. }
            | ThetaOutOfRange { .. }
            | EnumerationGuard { .. }
            | TruncationTooShort { .. } => ErrorKind::Validation,
            _ => ErrorKind::Numerical,
        }
    }
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 && theta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "theta must lie in (0, 1), got {theta}"
        )))
    }
}

pub(crate) fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}
