use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("keypoint `{0}` is missing")]
    MissingKeypoint(&'static str),
    #[error("no valid frames in the temporal ROI: {0}")]
    NoValidFrames(String),
    #[error("bounding box does not intersect the image")]
    EmptyIntersection,
    #[error("invalid temporal ROI {start}..={end} for a sequence of {len} frames")]
    InvalidRoi { start: usize, end: usize, len: usize },
    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("pose failure: keypoint `{keypoint}` present in {coverage:.3} of ROI frames")]
    PoseFailure { keypoint: &'static str, coverage: f64 },
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("feature mismatch: expected {expected} features, got {got}")]
    FeatureMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("clip has {got} frames, at least {needed} required")]
    TooShortClip { needed: usize, got: usize },
    #[error("backward called before a forward pass built the graph")]
    GraphNotBuilt,
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error("only one class present in the labels")]
    OneClassOnly,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("baseline severity is zero")]
    BaselineZero,
    #[error("value {0} out of range")]
    OutOfRange(i64),
    #[error("class {class} has {groups} groups, fewer than the {k} folds requested")]
    InsufficientGroups { class: u8, groups: usize, k: usize },
    #[error("class {0} has no rows")]
    EmptyClass(u8),
    #[error("too few points: need {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("no envelope fitted for class {0}")]
    MissingEnvelope(u8),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
