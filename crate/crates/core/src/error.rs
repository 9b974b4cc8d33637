use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies behind the camera (camera depth {depth})")]
    BehindCamera { depth: f64 },

    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),

    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}:{line}: malformed association line: {text}", .path.display())]
    MalformedAssociation {
        path: PathBuf,
        line: usize,
        text: String,
    },

    #[error("{}:{line}: malformed trajectory line: {text}", .path.display())]
    MalformedTrajectory {
        path: PathBuf,
        line: usize,
        text: String,
    },

    #[error("image size mismatch for {}: expected {expected:?}, got {actual:?}", .path.display())]
    ImageSizeMismatch {
        path: PathBuf,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("mask size mismatch: expected {expected:?}, got {actual:?}")]
    MaskSizeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("degenerate scene: {0}")]
    DegenerateScene(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("insufficient observations: {found} (need at least {required})")]
    InsufficientObservations { found: usize, required: usize },

    #[error("pose optimization diverged after {iterations} iterations")]
    Diverged { iterations: usize },

    #[error("no static pixels in frame; loss undefined")]
    NoStaticPixels,

    #[error("no timestamp pairs found within {max_dt} s")]
    NoPairsFound { max_dt: f64 },

    #[error("ATE needs at least 3 pose pairs, got {0}")]
    TooFewPairs(usize),

    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },

    #[error("config line {line}: unknown key `{key}`")]
    UnknownConfigKey { line: usize, key: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("map file: {0}")]
    MapFormat(String),

    #[error("too many lost frames: {lost} of {total}")]
    TrackingLost { lost: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
