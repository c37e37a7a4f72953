use thiserror::Error;

/// Crate-wide error type. Message strings are stable: callers and tests match
/// on them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point cloud")]
    EmptyCloud,

    #[error("k exceeds cloud size: k={k}, n={n}")]
    KExceedsCloudSize { k: usize, n: usize },

    /// Patch has too few points or zero spatial extent; no plane fit exists.
    #[error("degenerate patch")]
    DegeneratePatch,

    #[error("insufficient points for order-2 jet: need {need}, got {got}")]
    InsufficientJetPoints { need: usize, got: usize },

    /// The jet normal equations were numerically singular even after
    /// regularization.
    #[error("degenerate jet fit")]
    DegenerateJetFit,

    #[error("backward requires scalar root, got {rows}x{cols}")]
    NonScalarRoot { rows: usize, cols: usize },

    #[error("non-positive temperature: {value}")]
    NonPositiveTemperature { value: f64 },

    #[error("zero vector in loss")]
    ZeroVectorInLoss,

    #[error("zero vector")]
    ZeroVector,

    /// A loss, gradient, or parameter became non-finite during optimization.
    #[error("diverged: {0}")]
    Diverged(String),

    /// The damped normal equations stayed singular up to the damping cap.
    #[error("solver stalled")]
    SolverStalled,

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint version mismatch: expected {expected}, got {got}")]
    CheckpointVersion { expected: u32, got: u32 },

    #[error("normal count mismatch at {path}: {points} points, {normals} normals")]
    CountMismatch {
        path: String,
        points: usize,
        normals: usize,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    // The cause is folded into the message rather than exposed through
    // `source()` (the field is deliberately not named `source`), so chained
    // renderers don't print it twice.
    #[error("{path}: {cause}")]
    Io { path: String, cause: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
