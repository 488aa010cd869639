use std::path::PathBuf;

/// Errors raised anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected:?} but got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter {0} has no gradient; run backward before stepping")]
    MissingGrad(String),

    #[error("layer is frozen and rejects gradient accumulation")]
    Frozen,

    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },

    #[error("stage {stage} diverged at epoch {epoch} (loss = {loss})")]
    Diverged {
        stage: &'static str,
        epoch: usize,
        loss: f64,
    },

    #[error("decoder weights drifted during encoder adaptation (layer {layer})")]
    FreezeViolation { layer: usize },

    #[error("could not place distractor {index} without overlapping the target at ({x:.1}, {y:.1}) mm")]
    Placement { index: usize, x: f64, y: f64 },

    #[error("paired datasets disagree: {0}")]
    PairMismatch(String),

    #[error("malformed file at byte offset {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("architecture fingerprint mismatch: checkpoint was written for a different network")]
    Fingerprint,

    #[error("checksum mismatch: file is corrupted")]
    Checksum,

    #[error("missing checkpoint `{0}`")]
    MissingCheckpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, expected: &[usize], got: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
