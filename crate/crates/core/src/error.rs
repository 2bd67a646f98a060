//! Error type shared across the crate.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensor ops, the MoE layer, selection, training, and data loading.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Two matrices had incompatible shapes for the named operation.
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A vector or buffer had the wrong length.
    LengthMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    /// An operation that requires finite inputs saw a NaN or infinity.
    NonFinite { op: &'static str },
    /// A row permutation was not a bijection on the row indices.
    InvalidPermutation { rows: usize, detail: String },
    /// A negative standard deviation was passed to a sampler.
    NegativeStd { std: f64 },
    /// A subset size k was outside [1, n].
    SubsetSizeOutOfRange { k: usize, n: usize },
    /// An expert index was outside [0, n).
    ExpertIndexOutOfRange { index: usize, n: usize },
    /// A batch contained items of differing token shapes.
    RaggedBatch {
        expected: (usize, usize),
        got: (usize, usize),
        item: usize,
    },
    /// A combine matrix row did not sum to one.
    RowNotStochastic { row: usize, sum: f64 },
    /// A class label was outside [0, classes).
    LabelOutOfRange { label: usize, classes: usize },
    /// A training run was given no data.
    EmptyDataset,
    /// An experiment or task configuration failed validation.
    InvalidConfig { message: String },
    /// An IDX file started with the wrong magic number.
    IdxWrongMagic { expected: u32, got: u32 },
    /// An IDX file ended before its declared payload.
    IdxTruncated { needed: usize, got: usize },
    /// Image and label IDX files disagreed on the item count.
    IdxCountMismatch { images: usize, labels: usize },
    /// Wrapper around I/O failures when reading or writing files.
    Io { message: String },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, left, right } => write!(
                f,
                "{op}: shape mismatch, {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::LengthMismatch { op, expected, got } => {
                write!(f, "{op}: expected length {expected}, got {got}")
            }
            Error::NonFinite { op } => write!(f, "{op}: input contains NaN or infinity"),
            Error::InvalidPermutation { rows, detail } => {
                write!(f, "permutation is not a bijection on 0..{rows}: {detail}")
            }
            Error::NegativeStd { std } => write!(f, "standard deviation must be >= 0, got {std}"),
            Error::SubsetSizeOutOfRange { k, n } => {
                write!(f, "subset size k={k} out of range [1, {n}]")
            }
            Error::ExpertIndexOutOfRange { index, n } => {
                write!(f, "expert index {index} out of range [0, {n})")
            }
            Error::RaggedBatch {
                expected,
                got,
                item,
            } => write!(
                f,
                "batch item {item} has shape {}x{}, expected {}x{}",
                got.0, got.1, expected.0, expected.1
            ),
            Error::RowNotStochastic { row, sum } => {
                write!(f, "combine row {row} sums to {sum}, expected 1")
            }
            Error::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range [0, {classes})")
            }
            Error::EmptyDataset => write!(f, "dataset is empty"),
            Error::InvalidConfig { message } => write!(f, "invalid config: {message}"),
            Error::IdxWrongMagic { expected, got } => {
                write!(f, "IDX wrong magic: expected {expected:#010x}, got {got:#010x}")
            }
            Error::IdxTruncated { needed, got } => {
                write!(f, "IDX payload truncated: needed {needed} bytes, got {got}")
            }
            Error::IdxCountMismatch { images, labels } => {
                write!(f, "IDX count mismatch: {images} images vs {labels} labels")
            }
            Error::Io { message } => write!(f, "I/O error: {message}"),
        }
    }
}

impl std::error::Error for Error {}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io {
            message: e.to_string(),
        }
    }
}
