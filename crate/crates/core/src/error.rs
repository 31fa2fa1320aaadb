//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Malformed input files.
    Parse,
    /// Inputs that parse but cannot support the requested computation.
    Data,
    /// Numerical failures (rank deficiency, non-convergence).
    Numeric,
    /// Invalid parameters supplied by the caller.
    Usage,
    Io,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive value {value} at index {index}; shift/scale the covariate first")]
    NonPositiveInput { index: usize, value: f64 },

    #[error("covariate is constant (all values equal {0})")]
    ConstantInput(f64),

    #[error("design matrix is rank deficient (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("insufficient data for {what}: need {needed}, got {got}")]
    InsufficientData {
        what: String,
        needed: usize,
        got: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("significance level {0} is outside (0, 1)")]
    InvalidAlpha(f64),

    #[error("interval level {0} is outside (0, 1)")]
    InvalidLevel(f64),

    #[error("backfitting did not converge after {cycles} cycles; still changing: {}", features.join(", "))]
    NonConvergence { cycles: usize, features: Vec<String> },

    #[error("missing feature `{0}`")]
    MissingFeature(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported schema `{found}` (expected `{expected}`)")]
    SchemaVersionMismatch { found: String, expected: String },

    #[error("cell history contains no steps")]
    EmptyHistory,

    #[error("step has {got} samples, need at least {needed}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("no strictly decreasing voltage prefix of at least {needed} samples")]
    NonMonotonicPrefix { needed: usize },

    #[error("history has fewer than two reference discharges")]
    NoPhases,

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("phase {0} has no RW discharge steps")]
    EmptyPhase(usize),

    #[error("insufficient observations: need {needed}, got {got}")]
    InsufficientObservations { needed: usize, got: usize },

    #[error("voltage drop {0} V is not positive")]
    NonPositiveDrop(f64),

    #[error("step at t = {0} s precedes the first reference capacity measurement")]
    NoReferenceAnchor(f64),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("observed capacity {value} at index {index} is not positive")]
    NonPositiveObserved { index: usize, value: f64 },

    #[error("unknown protocol group {0} (expected 1..=4)")]
    InvalidGroup(u8),

    #[error("model artifact: {0}")]
    Artifact(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            Parse { .. } | SchemaVersionMismatch { .. } | Artifact(_) => ErrorClass::Parse,
            RankDeficient { .. } | NonConvergence { .. } => ErrorClass::Numeric,
            InvalidAlpha(_) | InvalidLevel(_) | InvalidGroup(_) => ErrorClass::Usage,
            Io(_) => ErrorClass::Io,
            Stage { source, .. } => source.class(),
            _ => ErrorClass::Data,
        }
    }

    /// Tags an error with the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.in_stage(stage))
    }
}
