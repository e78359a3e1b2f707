use thiserror::Error;

/// Errors raised by assembly, the solvers and the output layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("basis size overflows usize for m = {m}, r = {r}")]
    BasisOverflow { m: usize, r: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("root bracket [{lo}, {hi}] does not contain a sign change ({branch} branch)")]
    RootBracket {
        branch: &'static str,
        lo: f64,
        hi: f64,
    },

    #[error("need at least {needed} one-dimensional KLE modes, got {available}")]
    InsufficientModes { needed: usize, available: usize },

    #[error("preconditioner is singular: |1 - theta_0| = {0:e}")]
    SingularPreconditioner(f64),

    #[error("Schur approximation is degenerate: v0^T (A0 - I)^-1 v0 = {0:e}")]
    SchurDegenerate(f64),

    #[error("matrix factorization failed: {0}")]
    Factorization(String),

    #[error("NaN or infinity encountered in {0}")]
    NonFinite(&'static str),

    #[error("dense oracle size guard: {size} unknowns exceeds the limit of {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("singular Jacobian in dense Newton step {0}")]
    SingularJacobian(usize),

    #[error("backtracking failed after {backtracks} reductions (|F| = {norm_f:e}, trial |F| = {trial_norm:e})")]
    BacktrackFailure {
        backtracks: usize,
        norm_f: f64,
        trial_norm: f64,
    },

    #[error("Newton iteration did not converge in {steps} steps (|F| = {norm_f:e})")]
    NotConverged {
        steps: usize,
        norm_f: f64,
        trace: Box<crate::newton::NewtonTrace>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
