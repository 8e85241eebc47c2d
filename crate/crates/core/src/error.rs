use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index}, tolerance {tolerance:e})")]
    NotPositiveDefinite {
        index: usize,
        pivot: f64,
        tolerance: f64,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid step-size schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),

    #[error("negative evolution time {0}")]
    NegativeTime(f64),

    #[error("component index {index} out of range for {count} components")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("operation supports d <= 2 only, got d = {0}")]
    UnsupportedDimension(usize),

    #[error("degenerate sample: pooled standard deviation {0:e} is too small")]
    DegenerateSample(f64),

    #[error("SVRG anchor is stale: anchored at step {anchored_at}, epoch length {epoch_steps}, ensemble at step {step}")]
    StaleAnchor {
        anchored_at: u64,
        epoch_steps: u64,
        step: u64,
    },

    #[error("non-finite value produced: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
