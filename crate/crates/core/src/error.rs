use std::path::PathBuf;

use thiserror::Error;

use crate::imageio::ColorSpace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("cannot decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },
    #[error("expected {expected} input, got {actual:?}")]
    WrongColorSpace { expected: &'static str, actual: ColorSpace },
    #[error("invalid sigma {0}")]
    InvalidSigma(f64),
    #[error("sigma list is empty")]
    EmptySigmaList,
    #[error("{what} = {value} is outside [{min}, {max}]")]
    Range { what: &'static str, value: f64, min: f64, max: f64 },
    #[error("class {0} has no source pairs")]
    EmptyClass(String),
    #[error("bad magic bytes: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite weight in layer {0}")]
    NonFiniteWeight(String),
    #[error("backbone expects {expected}x{expected} input, got {width}x{height}")]
    WrongInputSize { expected: usize, width: usize, height: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("path list is empty")]
    EmptyPathList,
    #[error("path {0} appears twice")]
    DuplicatePath(String),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("class {class} has {count} members, fewer than k = {k}")]
    ClassTooSmall { class: usize, count: usize, k: usize },
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("sample {sample_id}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<Error>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn in_sample(self, sample_id: &str) -> Self {
        match self {
            e @ Error::Sample { .. } => e,
            e => Error::Sample { sample_id: sample_id.to_string(), source: Box::new(e) },
        }
    }

    /// Stable machine-readable name of the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::FileNotFound(_) => "FileNotFound",
            Error::Decode { .. } => "DecodeError",
            Error::WrongColorSpace { .. } => "WrongColorSpace",
            Error::InvalidSigma(_) => "InvalidSigma",
            Error::EmptySigmaList => "EmptySigmaList",
            Error::Range { .. } => "RangeError",
            Error::EmptyClass(_) => "EmptyClass",
            Error::BadMagic { .. } => "BadMagic",
            Error::VersionMismatch { .. } => "VersionMismatch",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteWeight(_) => "NonFiniteWeight",
            Error::WrongInputSize { .. } => "WrongInputSize",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NonFiniteInput => "NonFiniteInput",
            Error::EmptyPathList => "EmptyPathList",
            Error::DuplicatePath(_) => "DuplicatePath",
            Error::LabelOutOfRange { .. } => "LabelOutOfRange",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::LengthMismatch { .. } => "LengthMismatch",
            Error::ClassTooSmall { .. } => "ClassTooSmall",
            Error::Manifest(_) => "ManifestError",
            Error::Config(_) => "ConfigError",
            Error::Sample { source, .. } => source.kind(),
            Error::Io { .. } => "IoError",
        }
    }

    /// Sample id attached by the pipeline, if any.
    pub fn sample_id(&self) -> Option<&str> {
        match self {
            Error::Sample { sample_id, .. } => Some(sample_id),
            _ => None,
        }
    }
}
