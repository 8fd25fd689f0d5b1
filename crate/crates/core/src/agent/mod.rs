//! Per-agent recurrent Q-network with a message head, plus the message
//! channel (DRU), the noise schedule, and ε-greedy selection.

mod dru;
mod model;
mod select;

pub use dru::{argmax, dru_eval, dru_train, sample_noise, NoiseSchedule};
pub use model::{build_agent, AgentModel, AgentState, Architecture, Mode, Role, StepOutput};
pub use select::select_action;

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("epoch {epoch} outside a schedule of {total} epochs")]
    EpochOutOfRange { epoch: usize, total: usize },
    #[error("cannot select from an empty Q-vector")]
    EmptyQ,
    #[error("exploration rate {0} outside [0, 1]")]
    BadEpsilon(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, AgentError>;
