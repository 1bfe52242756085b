use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth:.3e})")]
    BehindCamera { depth: f64 },
    #[error("pixel ({u}, {v}) is outside the {width}x{height} image")]
    OutOfBounds {
        u: f64,
        v: f64,
        width: u32,
        height: u32,
    },
    #[error("plane passes through a camera center (|d| = {offset:.3e})")]
    DegeneratePlane { offset: f64 },
    #[error("ray grazes the surface (|<grad f, v>| = {cosine:.3e})")]
    GrazingRay { cosine: f64 },
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("pose count mismatch: {estimated} estimated vs {ground_truth} ground truth")]
    CountMismatch {
        estimated: usize,
        ground_truth: usize,
    },
    #[error("no zero crossing of the field inside the extraction bounds")]
    EmptySurface,
    #[error("empty point set")]
    EmptyInput,
    #[error("non-finite loss term `{term}`")]
    NonFiniteLoss { term: &'static str },
    #[error("training diverged: {0} consecutive non-finite steps")]
    DivergedRun(usize),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("missing image {0}")]
    MissingImage(PathBuf),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
