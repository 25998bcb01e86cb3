use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("conv_transpose2d: input has {input_channels} channels but kernel expects {kernel_channels} (input {input_shape}, kernel {kernel_shape})")]
    ChannelMismatch {
        input_channels: usize,
        kernel_channels: usize,
        input_shape: String,
        kernel_shape: String,
    },

    #[error("{op}: output extent would be {extent}, need >= 1 (input {input}, kernel {kernel}, stride {stride}, padding {padding})")]
    DegenerateOutput {
        op: &'static str,
        extent: i64,
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },

    #[error("tensor data length {got} does not match shape {shape} (expected {expected})")]
    BadTensorData {
        shape: String,
        expected: usize,
        got: usize,
    },

    #[error("graph: no parameter named {0:?}")]
    UnknownParameter(String),

    #[error("graph: duplicate leaf name {0:?}")]
    DuplicateParameter(String),

    #[error("graph: backward requires a scalar loss node, got shape {0}")]
    NonScalarLoss(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid sample id {id} (table has {len} entries)")]
    BadSampleId { id: usize, len: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("bounding box ({x},{y}) {w}x{h} out of bounds for {width}x{height} scene")]
    BoxOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("bounding box must be square for patch ops, got {w}x{h}")]
    BoxNotSquare { w: usize, h: usize },

    #[error("placement: min_side {min_side} exceeds scene extent {extent}")]
    PlacementTooLarge { min_side: usize, extent: usize },

    #[error("checkpoint {path}: bad magic (not a checkpoint file)")]
    BadMagic { path: PathBuf },

    #[error("checkpoint {path}: format version {found}, this build reads version {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint {path}: truncated or corrupt: {detail}")]
    CorruptCheckpoint { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: png: {detail}")]
    Png { path: PathBuf, detail: String },

    #[error("{path}: unsupported image format: {detail} (need 8-bit grayscale or RGB PNG)")]
    UnsupportedImage { path: PathBuf, detail: String },

    #[error("{path}: json: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("config {path}, line {line}: {detail}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),

    #[error("manifest: {0}")]
    BadManifest(String),

    #[error("annotations: {0}")]
    BadAnnotations(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn shape_string(shape: &[usize]) -> String {
    let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", parts.join("x"))
}
