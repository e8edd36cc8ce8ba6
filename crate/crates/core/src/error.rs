use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("arm {0} has no observations")]
    EmptyArm(usize),

    #[error("positivity violated for arm {arm}: n_a = {n_a} of n = {n}")]
    Positivity { arm: usize, n_a: usize, n: usize },

    #[error("degenerate fit: {0}")]
    Degenerate(String),

    #[error("convergence failure: {0}")]
    Convergence(String),

    #[error("rank deficient: {0}")]
    Rank(String),

    #[error("singular estimating equation for c = ({c1}, {c2}): {reason}")]
    Singular { c1: f64, c2: f64, reason: String },

    #[error("parameter outside family domain: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("{failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, with any context layers peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
