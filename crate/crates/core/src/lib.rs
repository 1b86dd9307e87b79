//! Risk-sensitive control of finite continuous-time Markov decision
//! processes: finite-horizon, discounted and average exponential costs,
//! with Monte Carlo estimators as independent checks.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod avg_eigen;
pub mod error;
pub mod hjb_discounted;
pub mod hjb_finite;
pub mod instances;
pub mod linalg;
pub mod model;
pub mod policy_iter;
pub mod risk_neutral;
pub mod sim;

pub use avg_eigen::{
    check_lyapunov, evaluate_policy, principal_eigen, search_certificate, twisted_generator,
    LyapunovCertificate, LyapunovReport, PolicyEvaluation, StationaryPolicy,
};
pub use error::{Error, ErrorKind, Result};
pub use hjb_discounted::{
    discounted_policy_at_time, discounted_value, solve_eps, solve_limit, DiscountedSolution,
    LimitSolution,
};
pub use hjb_finite::{picard_solve, solve_finite_horizon, MarkovPolicy, ValueGrid};
pub use model::{load_model, validate, CtmdpModel, ModelDiagnostics};
pub use policy_iter::{brute_force_average, policy_iteration, AverageSolution, BruteForceResult};
pub use sim::{simulate, ActionSource, McEstimate, StopRule, Trajectory};
