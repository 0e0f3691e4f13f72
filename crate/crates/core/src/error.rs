use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("layer `{layer}`: {detail}")]
    LayerDim { layer: String, detail: String },

    #[error("backward needs a scalar output, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("distribution does not sum to 1 (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("k = {k} outside 0..={max}")]
    KOutOfRange { k: usize, max: usize },

    #[error("position ({i}, {j}) outside the {rows}x{cols} grid")]
    OutOfGrid {
        i: usize,
        j: usize,
        rows: usize,
        cols: usize,
    },

    #[error("duplicate position ({0}, {1})")]
    DuplicatePosition(usize, usize),

    #[error("patch {patch_h}x{patch_w} does not fit in a {image_h}x{image_w} image")]
    PatchTooLarge {
        patch_h: usize,
        patch_w: usize,
        image_h: usize,
        image_w: usize,
    },

    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("sequence length {0} outside 1..=5")]
    SequenceLength(usize),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("infeasible geometry: {0}")]
    Geometry(String),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("length mismatch: header implies {expected} bytes, file has {actual}")]
    LengthMismatch { expected: u64, actual: u64 },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("unknown config key `{0}`")]
    UnknownKey(String),

    #[error("invalid value `{value}` for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        value: String,
        reason: String,
    },

    #[error("missing path {0}")]
    MissingPath(PathBuf),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
