use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, PartialEq)]
pub enum Error {
    #[error("invalid world: {0}")]
    InvalidWorld(String),

    #[error("footprint of {side} cells does not fit a {rows}x{cols} world")]
    FootprintTooLarge { side: usize, rows: usize, cols: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("uncertainty value {0} outside [0, 1]")]
    UncertaintyOutOfRange(f64),

    #[error("region impurity radius must be at least 1")]
    InvalidRadius,

    #[error("cannot select {alpha} pixels from an image of {pixels} pixels")]
    TooFewPixels { alpha: usize, pixels: usize },

    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
}
