use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("time grid mismatch: {0}")]
    Grid(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("Newton iteration did not converge after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },
    #[error("Jacobian is numerically singular (smallest |eigenvalue| {min_abs_eig:.3e})")]
    SingularJacobian { min_abs_eig: f64 },
    #[error("degenerate critical point: eigenvalue {eigenvalue:.3e} within tolerance of zero")]
    DegenerateCriticalPoint { eigenvalue: f64 },
    #[error("negative time {s} requested on a part that only has a forward semigroup")]
    NegativeTimeOnPlus { s: f64 },
    #[error("unsupported operator norm pair {from} -> {to}")]
    UnsupportedNorm { from: String, to: String },
    #[error("corrector change {change:.3e} exceeds step tolerance at s = {s}")]
    StepRejected { s: f64, change: f64 },
    #[error("explicit integrator step collapsed to {step:.3e} at s = {s}")]
    StiffnessAbort { s: f64, step: f64 },
    #[error("contraction stalled: ratios {ratios:?}")]
    ContractionStall { ratios: Vec<f64> },
    #[error("fixed-point iteration hit the iteration cap {iters} (last change {change:.3e})")]
    IterationLimit { iters: usize, change: f64 },
    #[error("data of norm {norm:.4e} violates ball radius {radius:.4e}")]
    BallViolation { norm: f64, radius: f64 },
    #[error("action level not bracketed inside the chart along direction {direction}")]
    BisectionFail { direction: usize },
    #[error("endpoint conditions missed: fiber residual {fiber:.3e}, distance {dist:.3e} (r = {r:.3e})")]
    FiberMiss { fiber: f64, dist: f64, r: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
