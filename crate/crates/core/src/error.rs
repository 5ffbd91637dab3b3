use thiserror::Error;

use crate::numerics::Vector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector field produced a non-finite value")]
    NonFiniteField,
    #[error("fit window [{0}, {1}] holds fewer than 3 samples")]
    EmptyWindow(f64, f64),
    #[error("non-positive value {value} at t = {time} inside the fit window")]
    NonPositiveValue { time: f64, value: f64 },
    #[error("quadrature did not reach tolerance {tol} within the subdivision budget")]
    ToleranceNotReached { tol: f64 },
    #[error("bracket [{lo}, {hi}] does not straddle the target")]
    BracketInvalid { lo: f64, hi: f64 },

    #[error("distributions are not comparable: {0}")]
    IncompatibleVariants(String),
    #[error("metric is degenerate: d(x, x) = {0}")]
    DegenerateMetric(f64),
    #[error("no probe pairs supplied")]
    NoProbes,
    #[error("integrand produced a non-finite value")]
    NonFiniteIntegrand,
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("transport solver failed: {0}")]
    TransportFailed(String),

    #[error("forward evaluation of A is unavailable at this point")]
    ForwardUnavailable,
    #[error("modulus gap phi(s) - beta*tau*s vanishes at s = {0}")]
    ModulusGapViolated(f64),
    #[error("theta^-1 target {0} exceeds the divergence budget")]
    TargetUnreachable(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("iteration budget of {iterations} exhausted (residual {residual:e})")]
    MaxIterExceeded {
        iterations: usize,
        residual: f64,
        best: Vector,
    },
    #[error("no contraction: step ratios exceeded 1 for {0} consecutive outer iterations")]
    NoContraction(usize),
    #[error("at least two iterates are required")]
    TooFewIterates,

    #[error("step h = {h} exceeds the stable bound {h_max}")]
    StepTooLarge { h: f64, h_max: f64 },
    #[error("initial state lies outside the domain of A")]
    DomainViolation,
    #[error("distance to the equilibrium grows over the final quarter of the horizon")]
    EquilibriumMismatch,
    #[error("invalid time horizon: {0}")]
    InvalidHorizon(String),

    #[error("A has no forward (gradient) evaluation; the smooth case is required")]
    NonSmoothA,
    #[error("potential values are not available for this instance")]
    PotentialUnavailable,

    #[error("x and y must be distinct points")]
    SamePoint,
    #[error("power iteration did not converge after {iterations} steps (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("the two measures coincide")]
    EqualMeasures,
    #[error("invalid random walk space: {0}")]
    InvalidSpace(String),

    #[error("condition violated: rho = {rho} must be below {limit}")]
    ConditionViolated { rho: f64, limit: f64 },

    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("constraint error at {path}: {message}")]
    Constraint { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn constraint(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Constraint {
            path: path.into(),
            message: message.into(),
        }
    }
}
