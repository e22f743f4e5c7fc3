use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A population config violates an invariant. `stratum` is the 0-based
    /// index of the offending stratum when the violation is stratum-local.
    #[error("schema error{}: {message}", .stratum.map(|k| format!(" in stratum {k}")).unwrap_or_default())]
    Schema {
        stratum: Option<usize>,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Stratum `0` has an arm with fewer than two units, so its robust
    /// variance is undefined.
    #[error("stratum {0} has an arm with fewer than 2 units; robust variance undefined")]
    DegenerateArm(usize),

    #[error("enumeration would yield {count} assignments, above the cap of {cap}")]
    CapExceeded { count: u128, cap: u128 },

    #[error("conditional estimands require a shock realization")]
    MissingShocks,

    #[error("unsupported shock model: {0}")]
    UnsupportedMode(String),

    #[error("strata sizes differ; the requested quantity needs n_k equal for all k")]
    UnequalStrataSizes,

    #[error("full enumeration over {clusters} clusters needs 2^{clusters} sign vectors, above the cap of {cap}")]
    TooManyClusters { clusters: usize, cap: u64 },

    #[error("prerequisite violated for target {target}: {reason}")]
    PrerequisiteViolation { target: String, reason: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(stratum: Option<usize>, message: impl Into<String>) -> Self {
        Error::Schema {
            stratum,
            message: message.into(),
        }
    }
}
