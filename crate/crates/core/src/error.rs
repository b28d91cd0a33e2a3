//! Crate-wide error type.

use thiserror::Error;

/// Which side of the pair partition a degenerate-set error refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairSide {
    Positive,
    Negative,
    /// Both sides at once, for losses that can run with either side empty
    /// but not with both.
    Both,
}

impl std::fmt::Display for PairSide {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PairSide::Positive => write!(f, "positive"),
            PairSide::Negative => write!(f, "negative"),
            PairSide::Both => write!(f, "entire"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// A vector with norm at or below the degeneracy threshold cannot be normalized.
    #[error("cannot normalize: vector norm {norm:e} is at or below {threshold:e}")]
    DegenerateNorm { norm: f64, threshold: f64 },

    /// Two operands have incompatible lengths or shapes.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Fewer samples than an operation can work with.
    #[error("batch too small: need at least {need} samples, got {got}")]
    BatchTooSmall { need: usize, got: usize },

    /// An embedding row is not unit-norm within tolerance.
    #[error("embedding row {row} has norm {norm} (expected 1 within {tol:e})")]
    NotNormalized { row: usize, norm: f64, tol: f64 },

    /// An operation received an empty sequence it cannot handle.
    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    /// A loss was asked to operate on an empty pair set.
    #[error("{side} pair set is empty")]
    EmptyPairSet { side: PairSide },

    /// No anchor in the batch has both a positive and a negative partner.
    #[error("no valid triplet: no anchor has both a positive and a negative partner")]
    NoValidTriplet,

    /// A positive pair has no negative partner on either endpoint.
    #[error("positive pair ({i}, {j}) has no negative partner on either endpoint")]
    NoNegativePartner { i: usize, j: usize },

    /// Gradient / parameter shapes disagree.
    #[error("shape mismatch in {context}")]
    ShapeMismatch { context: &'static str },

    /// A raster operation requires a square image.
    #[error("raster is not square: {h}x{w}")]
    NotSquare { h: usize, w: usize },

    /// A backward pass received a cache from a different forward call.
    #[error("forward cache does not match the given parameters or batch")]
    CacheMismatch,

    /// Invalid user-supplied configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The class-balanced sampler cannot satisfy its (P, Q) request.
    #[error("insufficient class samples: need {classes} classes with >= {per_class} samples, only {available} qualify")]
    InsufficientClassSamples {
        classes: usize,
        per_class: usize,
        available: usize,
    },

    /// Classifier training needs at least two classes.
    #[error("training data contains a single class")]
    SingleClass,

    /// k-NN classification against an empty reference set.
    #[error("reference embedding set is empty")]
    EmptyTrainSet,

    /// A dataset or checkpoint file does not start with the expected magic bytes.
    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: String, expected: String },

    /// A dataset or checkpoint file ended before its declared payload.
    #[error("truncated file {path}: {detail}")]
    TruncatedFile { path: String, detail: String },

    /// A stored label is outside the declared class range.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    /// A batch stayed degenerate for a loss after repeated resampling.
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {detail}")]
    Parse { path: String, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
