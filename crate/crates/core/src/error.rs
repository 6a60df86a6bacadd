use thiserror::Error;

/// Errors produced by model construction, simulation and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("non-finite value from `{function}` at trait {trait_value:?}, age {age}")]
    NonFinite {
        function: &'static str,
        trait_value: Vec<f64>,
        age: f64,
    },

    #[error("degenerate mutation kernel: no offspring trait inside the domain after {attempts} attempts")]
    DegenerateKernel { attempts: u64 },

    /// An acceptance ratio exceeded one, i.e. a declared rate bound is false.
    #[error("declared bound violated: {0}")]
    BoundViolation(String),

    #[error("step size too large: {0}")]
    StepSize(String),

    /// The survival function exp(-∫ r) does not decay below the requested
    /// level before the configured search limit: the lower envelope of the
    /// allometric rate must not be integrable.
    #[error("heavy-tailed age distribution at trait {trait_value:?}: survival still above {eps:e} at age {a_max}")]
    HeavyTail {
        trait_value: Vec<f64>,
        eps: f64,
        a_max: f64,
    },

    #[error("quadrature did not converge on [{lo}, {hi}] within {intervals} intervals")]
    Quadrature { lo: f64, hi: f64, intervals: usize },

    #[error("unknown model `{0}`: not a built-in name or a readable JSON file")]
    UnknownModel(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("expression error: {0}")]
    Expr(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
