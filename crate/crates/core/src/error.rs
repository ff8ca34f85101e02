use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Scenario data violate a modelling hypothesis.
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    /// Two arrays that must share a layout do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Unregularized inversion of a rank-deficient operator.
    #[error("ill-posed problem: {0} (use a regularization weight delta > 0)")]
    IllPosed(String),

    /// The iterative solver hit its iteration cap. Carries the last iterate.
    #[error("no convergence after {iterations} iterations (projected gradient norm {pg_norm:.3e})")]
    Convergence { iterations: usize, pg_norm: f64, iterate: Vec<f64> },

    /// An operation was called on data that do not satisfy its precondition.
    #[error("precondition failed: {0}")]
    Precondition(String),

    /// The triangular boundary system has a zero diagonal.
    #[error("singular system: {0}")]
    Singular(String),

    /// A witness construction could not meet its constraints.
    #[error("construction failed: {0}")]
    Construction(String),

    /// A configuration field violates a rule.
    #[error("invalid config field `{field}`: {rule}")]
    Config { field: String, rule: String },

    /// A pipeline stage failed.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Error::Config { field: field.into(), rule: rule.into() }
    }
}
