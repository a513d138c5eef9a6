use crate::scheduler::Infeasible;
use crate::tensor::TensorError;
use crate::world::WorldError;

/// Crate-level error. Subsystems keep their own error types; this one joins
/// them for the pipeline, harness and command-line layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("infeasible schedule: {0}")]
    Infeasible(Infeasible),
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Data(String),
    #[error("expert failed in episode {kind} seed {seed}: {detail}")]
    ExpertFailure { kind: String, seed: u64, detail: String },
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("missing checkpoints for modes: {0}")]
    MissingCheckpoints(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<Infeasible> for Error {
    fn from(e: Infeasible) -> Self {
        Error::Infeasible(e)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
