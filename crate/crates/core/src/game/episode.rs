use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pool::{ImagePool, Split};
use super::{GameError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Asker,
    Answerer,
    /// Final asker step: its Q-head picks the guess, its message is dropped.
    AskerGuess,
}

/// Fixed alternation: question, answer, ..., guess.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSchedule {
    pub speakers: Vec<Speaker>,
    /// True when `n` is not one of the two configurations the game defines.
    pub experimental: bool,
}

impl TurnSchedule {
    pub fn steps(&self) -> usize {
        self.speakers.len()
    }

    pub fn rounds(&self) -> usize {
        self.steps() / 2
    }

    /// Zero-based index of the guess step (always the last).
    pub fn guess_step(&self) -> usize {
        self.steps() - 1
    }
}

/// `T = 2 * (n / 2) + 1`: one question/answer round per pair of images.
pub fn schedule_for(n: usize) -> Result<TurnSchedule> {
    if n < 2 {
        return Err(GameError::TooFewImages(n));
    }
    let rounds = n / 2;
    let mut speakers = Vec::with_capacity(2 * rounds + 1);
    for _ in 0..rounds {
        speakers.push(Speaker::Asker);
        speakers.push(Speaker::Answerer);
    }
    speakers.push(Speaker::AskerGuess);
    Ok(TurnSchedule {
        speakers,
        experimental: n != 2 && n != 4,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub questions: Vec<usize>,
    pub answers: Vec<usize>,
    pub guess: Option<usize>,
    pub reward: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    /// Pool ids in slot order; slot order defines the guess actions.
    pub held: Vec<usize>,
    /// Slot of the image the answerer holds.
    pub target: usize,
    pub schedule: TurnSchedule,
    pub transcript: Transcript,
}

impl Episode {
    pub fn n(&self) -> usize {
        self.held.len()
    }

    pub fn target_id(&self) -> usize {
        self.held[self.target]
    }

    /// Scores the guess: 1 on a hit, 0 otherwise. The single team reward
    /// goes to both agents.
    pub fn score_guess(&mut self, guess: usize) -> Result<u8> {
        if guess >= self.n() {
            return Err(GameError::GuessOutOfRange { guess, n: self.n() });
        }
        let reward = u8::from(guess == self.target);
        self.transcript.guess = Some(guess);
        self.transcript.reward = Some(reward);
        Ok(reward)
    }
}

/// Samples `n` distinct ids uniformly from the eligible split (slots in
/// sampled order) and a uniform target slot.
pub fn new_episode(pool: &ImagePool, n: usize, rng: &mut impl Rng, split: Split) -> Result<Episode> {
    let schedule = schedule_for(n)?;
    let eligible = pool.eligible(split);
    if eligible.len() < n {
        return Err(GameError::PoolTooSmall {
            eligible: eligible.len(),
            n,
        });
    }
    let held = index::sample(rng, eligible.len(), n)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    let target = rng.random_range(0..n);
    Ok(Episode {
        held,
        target,
        schedule,
        transcript: Transcript::default(),
    })
}
