use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("metric is not positive definite at q = {q:?}")]
    NotPositiveDefinite { q: Vec<f64> },

    #[error("metric is degenerate at q = {q:?}")]
    DegenerateMetric { q: Vec<f64> },

    #[error("metric is not symmetric at q = {q:?} (relative asymmetry {asymmetry:e})")]
    AsymmetricMetric { q: Vec<f64>, asymmetry: f64 },

    #[error("q = {q:?} lies outside the feasible region")]
    OutsideFeasibleRegion { q: Vec<f64> },

    #[error("control vector fields are linearly dependent at q = {q:?}")]
    DependentControlFields { q: Vec<f64> },

    #[error(
        "barrier gradient leaves the control distribution at q = {q:?} (residual {residual:e})"
    )]
    HypothesisViolated { q: Vec<f64>, residual: f64 },

    #[error("shaped metric violates the matching conditions at q = {q:?} (residual {residual:e})")]
    MatchingViolated { q: Vec<f64>, residual: f64 },

    #[error("blend coefficients must satisfy s > 0 and t >= 0 (got s = {s}, t = {t})")]
    NonPositiveCoefficient { s: f64, t: f64 },

    #[error("initial state is infeasible: {0}")]
    InfeasibleInitialState(String),

    #[error("Lagrangian Hessian is singular at q = {q:?}")]
    SingularHessian { q: Vec<f64> },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("maximum number of steps ({steps}) exceeded at t = {t}")]
    MaxStepsExceeded { t: f64, steps: usize },

    #[error("equilibrium search did not converge from guess {guess:?}")]
    NoConvergence { guess: Vec<f64> },

    #[error("parameter `{name}` = {value} out of range: {reason}")]
    ParameterOutOfRange {
        name: String,
        value: f64,
        reason: String,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0}")]
    Invalid(String),
}
