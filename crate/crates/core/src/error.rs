use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("category {category}: category has no normal training images")]
    EmptyCategory { category: String },

    #[error("missing ground-truth mask for anomalous test image {image} (expected {expected})")]
    MissingMask { image: PathBuf, expected: PathBuf },

    #[error("dataset root {0} contains no category directories")]
    NoCategories(PathBuf),

    #[error("not an FTNS tensor: {0}")]
    BadMagic(String),

    #[error("unsupported {format} version {version}")]
    BadVersion { format: &'static str, version: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("tensor dimensions overflow: {0:?}")]
    DimOverflow(Vec<u64>),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing embedding file {0}")]
    MissingEmbedding(PathBuf),

    #[error("file provider cannot encode novel pixels")]
    NovelPixels,

    #[error("area ratio too large for image: rect {w}x{h} does not fit {width}x{height}")]
    AreaTooLarge {
        w: usize,
        h: usize,
        width: usize,
        height: usize,
    },

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("AUROC undefined: {0}")]
    AurocUndefined(&'static str),

    #[error("metric undefined: {0}")]
    MetricUndefined(&'static str),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
