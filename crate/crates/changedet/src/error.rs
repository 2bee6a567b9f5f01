use std::path::PathBuf;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    MalformedImage { path: PathBuf, detail: String },

    /// The file decoded, but carries more than 8 bits per sample.
    #[error("{path}: unsupported bit depth, expected 8-bit samples")]
    UnsupportedBitDepth { path: PathBuf },

    /// The file decoded, but is not single-channel grayscale.
    #[error("{path}: unsupported channel count, expected single-channel grayscale")]
    UnsupportedChannels { path: PathBuf },

    #[error("dimension mismatch: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch {
        a_width: usize,
        a_height: usize,
        b_width: usize,
        b_height: usize,
    },

    /// A reference histogram with zero total mass cannot define a mapping.
    #[error("reference histogram is empty")]
    EmptyReferenceHistogram,

    #[error("tumor mask is empty")]
    EmptyTumorMask,

    /// Growth simulation ran out of healthy pixels before meeting its budget.
    #[error("no healthy ring around the tumor: {0}")]
    NoHealthyRing(String),

    #[error("noise level must be positive, got {0}")]
    NonpositiveSigma(f64),

    /// ROC construction needs both changed and unchanged pixels in the region.
    #[error("ground truth has a single class inside the evaluation region")]
    SingleClassGroundTruth,

    /// Metrics over zero pixels are meaningless rather than zero.
    #[error("confusion counts are all zero")]
    EmptyConfusion,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: {detail}")]
    Manifest { path: PathBuf, detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::MalformedImage {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
