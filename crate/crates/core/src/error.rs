use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to choose an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("i/o error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at {}:{line}: {message}", path.display())]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unknown class label {label:?} at line {line}")]
    UnknownClassLabel { line: u64, label: String },

    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),

    #[error("duplicate sample id {0:?}")]
    DuplicateSampleId(String),

    #[error("signer-independent split needs at least 3 signers, found {found}")]
    TooFewSigners { found: usize },

    #[error("split {0:?} would receive zero samples")]
    EmptySplit(String),

    #[error("invalid split fractions: {0}")]
    InvalidFractions(String),

    #[error("cannot decode frame {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("frame {} is {found_w}x{found_h}, expected {expected_w}x{expected_h}", path.display())]
    InconsistentResolution {
        path: PathBuf,
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },

    #[error("standard deviation of channel {channel} must be positive")]
    ZeroStd { channel: usize },

    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("positional encoding needs an even model width, got {0}")]
    OddDimension(usize),

    #[error("missing tensor {0:?}")]
    MissingTensor(String),

    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("malformed checkpoint {}: {message}", path.display())]
    Checkpoint { path: PathBuf, message: String },

    #[error("class {class:?} has no training samples")]
    EmptyClass { class: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch} (samples: {})", samples.join(", "))]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        samples: Vec<String>,
    },

    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },

    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: usize, classes: usize },

    #[error("confusion matrix holds no samples")]
    EmptyMatrix,

    #[error("output {} already exists (pass force to overwrite)", .0.display())]
    OutputExists(PathBuf),

    #[error("{failed} of {total} samples failed quality control: {}", samples.join(", "))]
    QcFailed {
        failed: usize,
        total: usize,
        samples: Vec<String>,
    },

    #[error("video decoder failed: {0}")]
    Decoder(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(context: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }

    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_)
            | Error::InvalidFractions(_)
            | Error::ZeroStd { .. }
            | Error::OddDimension(_)
            | Error::TooFewSigners { .. } => ErrorCategory::Config,
            Error::MissingFile(_)
            | Error::Io { .. }
            | Error::MalformedRow { .. }
            | Error::UnknownClassLabel { .. }
            | Error::DuplicateClass(_)
            | Error::DuplicateSampleId(_)
            | Error::EmptySplit(_)
            | Error::Decode { .. }
            | Error::InconsistentResolution { .. }
            | Error::MissingTensor(_)
            | Error::TensorShape { .. }
            | Error::Checkpoint { .. }
            | Error::EmptyClass { .. }
            | Error::OutputExists(_)
            | Error::QcFailed { .. }
            | Error::Decoder(_) => ErrorCategory::Data,
            Error::ShapeMismatch { .. }
            | Error::NonFiniteLoss { .. }
            | Error::LengthMismatch { .. }
            | Error::IndexOutOfRange { .. }
            | Error::EmptyMatrix => ErrorCategory::Runtime,
        }
    }
}
