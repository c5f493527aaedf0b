use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid raster: {0}")]
    InvalidRaster(String),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image {path}: {reason}")]
    UnsupportedImage { path: PathBuf, reason: String },

    #[error("affine matrix is singular (|det| = {0:e})")]
    SingularTransform(f64),

    #[error("invalid synthetic spec: {0}")]
    InvalidSynthetic(String),

    #[error("invalid derivative config: {0}")]
    InvalidConfig(String),

    #[error("unsupported derivative kernel order ({0}, {1})")]
    UnsupportedKernelOrder(u8, u8),

    #[error("kernel {kernel}x{kernel} does not fit a {width}x{height} image")]
    KernelTooLarge {
        kernel: usize,
        width: usize,
        height: usize,
    },

    #[error("image has zero mass; centroid is undefined")]
    ZeroMass,

    #[error("normalization base {0:e} is not positive")]
    NonPositiveNormalization(f64),

    #[error("tuple budget exceeded: {tuples} tuples > {budget}")]
    TupleBudget { tuples: f64, budget: f64 },

    #[error("feature vectors have mismatched layouts")]
    FeatureLayoutMismatch,

    #[error("feature vectors share no jointly defined component")]
    NoCommonComponents,

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("invalid core spec: {0}")]
    InvalidCore(String),
}
