//! What the agents ended up saying: transcripts, the answer partition,
//! answer distances and their 2-D embedding, context dependence of second
//! questions, and the zero-state ablation.

mod ablation;
mod homograph;
mod partition;
mod protocols;
mod tsne;

pub use ablation::{run_ablation, AblationArm, AblationRun};
pub use homograph::homograph_rate;
pub use partition::{answer_partition, distance_matrix, AnswerMatrix, DistanceMatrix, PartitionCell};
pub use protocols::{record_protocols, word_letter, ProtocolRecord};
pub use tsne::{joint_probabilities, tsne_embed, Embedding2D, TsneParams};

use thiserror::Error;

use crate::game::GameError;
use crate::trainer::TrainError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("{0}")]
    Shape(String),
    #[error("perplexity {perplexity} is not achievable with {points} points")]
    Perplexity { perplexity: f64, points: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Game(#[from] GameError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;
