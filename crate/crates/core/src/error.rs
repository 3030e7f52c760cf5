use crate::value::{CoordinateId, ValueShape};

/// Errors surfaced by models, the engine, and diagnostics.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at coordinate {coord}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        coord: CoordinateId,
        expected: ValueShape,
        got: ValueShape,
    },

    #[error("density not finite at coordinate {coord}: {context}")]
    SupportViolation { coord: CoordinateId, context: String },

    #[error("matrix not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("conditional distribution undefined: {0}")]
    ConditionalUndefined(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("worker {worker} failed at coordinate {coord}: {source}")]
    Worker {
        worker: usize,
        coord: CoordinateId,
        #[source]
        source: Box<Error>,
    },

    #[error("worker {0} panicked: {1}")]
    WorkerPanicked(usize, String),

    #[error("diagnostics reservoir is empty; raise diag_sample_prob to record MH ratios")]
    EmptyReservoir,

    #[error("trace has zero variance; autocorrelation undefined")]
    ConstantTrace,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("dataset format error: {0}")]
    DataFormat(String),
}

pub type Result<V> = std::result::Result<V, Error>;

impl Error {
    /// Attach worker/coordinate context to a model error.
    pub fn in_worker(self, worker: usize, coord: CoordinateId) -> Error {
        Error::Worker {
            worker,
            coord,
            source: Box::new(self),
        }
    }
}
