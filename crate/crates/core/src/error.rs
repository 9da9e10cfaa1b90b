use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth:e})")]
    Cheirality { depth: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("cannot fix gauge: {0}")]
    Gauge(String),

    #[error("time index {time_index}: insufficient overlap ({detail})")]
    InsufficientOverlap { time_index: u32, detail: String },

    #[error("degenerate scene: image {image} sees {visible} landmarks (need at least {required})")]
    DegenerateScene {
        image: u32,
        visible: usize,
        required: usize,
    },

    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),

    #[error("line {line}: malformed {record} record: {message}")]
    Parse {
        line: usize,
        record: String,
        message: String,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
