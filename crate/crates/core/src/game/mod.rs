//! The cooperative Guess Who? environment: image pools, episodes, turn
//! schedule, and scoring.

mod episode;
pub mod pool;
pub mod ppm;

pub use episode::{new_episode, schedule_for, Episode, Speaker, Transcript, TurnSchedule};
pub use pool::{generate_synthetic_pool, load_image_pool, ImagePool, Split, ATTRIBUTE_NAMES};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("synthetic pools hold at most 32 images (5 binary attributes), asked for {0}")]
    AttributeSpaceExhausted(usize),
    #[error("{eligible} eligible images cannot fill {n} distinct slots")]
    PoolTooSmall { eligible: usize, n: usize },
    #[error("a game needs at least 2 held images, got {0}")]
    TooFewImages(usize),
    #[error("guess {guess} outside the {n} held slots")]
    GuessOutOfRange { guess: usize, n: usize },
    #[error("{path}: {reason}")]
    Image { path: String, reason: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GameError>;
