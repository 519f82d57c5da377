//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. The variants
//! are grouped by the stage that raises them (construction/validation, text
//! formats, inference, learning) so the CLI can map them onto its exit-code
//! contract without string matching.

use thiserror::Error;

/// Errors raised by model construction, parsing, inference and learning.
#[derive(Debug, Error)]
pub enum Error {
    /// Interval bounds are reversed or not comparable (NaN).
    #[error("invalid interval: lower bound {a} exceeds upper bound {b}")]
    InvalidInterval { a: f64, b: f64 },

    /// A generalized normal was built with a negative or non-finite
    /// dispersion, or a non-finite location.
    #[error("invalid generalized normal: {0}")]
    InvalidGn(String),

    /// Attribute schema violation (duplicate names, empty category sets, …).
    #[error("schema error: {0}")]
    Schema(String),

    /// A model violated a structural invariant (weights, marginal kinds, …).
    #[error("invalid model: {0}")]
    Model(String),

    /// A model file could not be parsed.
    #[error("model format error at line {line}: {msg}")]
    ModelFormat { line: usize, msg: String },

    /// A value vector does not conform to the schema (arity or kind).
    #[error("value mismatch: {0}")]
    ValueMismatch(String),

    /// Query text could not be parsed.
    #[error("query syntax error at {line}:{col}: {msg}")]
    QuerySyntax { line: usize, col: usize, msg: String },

    /// An attribute name is not part of the schema.
    #[error("unknown attribute `{0}`")]
    UnknownAttribute(String),

    /// A category label is not part of the attribute's value set.
    #[error("unknown category `{cat}` for attribute `{attr}`")]
    UnknownCategory { attr: String, cat: String },

    /// An observation kind is incompatible with the attribute kind.
    #[error("kind mismatch on attribute `{attr}`: {msg}")]
    KindMismatch { attr: String, msg: String },

    /// Two observations on the same attribute cannot be fused into one
    /// elementary observation (e.g. an interval combined with anything else).
    #[error("unsupported conjunction: {0}")]
    UnsupportedConjunction(String),

    /// Evidence weights were all zero (normalization impossible).
    #[error("evidence weights are all zero")]
    ZeroWeights,

    /// The evidence has zero likelihood under the model: it contradicts the
    /// model support (or is internally contradictory).
    #[error("zero evidence: {0}")]
    ZeroEvidence(String),

    /// The requested estimator is not defined for the posterior's shape.
    #[error("unsupported estimator: {0}")]
    UnsupportedEstimator(String),

    /// A training table cannot be fitted as requested (all-missing
    /// attribute, fewer examples than components, …).
    #[error("degenerate training table: {0}")]
    DegenerateTable(String),

    /// The fit itself failed (a training row with zero likelihood, …).
    #[error("fit failed: {0}")]
    FitFailure(String),

    /// A dataset, schema or corruption-spec file could not be parsed.
    #[error("data error at line {line}: {msg}")]
    Data { line: usize, msg: String },

    /// Operation is not supported in the requested form.
    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
