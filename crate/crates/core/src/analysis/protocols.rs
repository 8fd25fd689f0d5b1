use rand::Rng;

use super::Result;
use crate::game::{new_episode, ImagePool, Split};
use crate::trainer::{play_batch, Policy, EVAL_CHUNK, YES};

/// One greedy game, as played.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolRecord {
    pub held: Vec<usize>,
    pub target_slot: usize,
    pub target_id: usize,
    pub questions: Vec<usize>,
    pub answers: Vec<usize>,
    pub guess: usize,
    pub reward: u8,
}

/// `A`, `B`, ... for question words.
pub fn word_letter(w: usize) -> String {
    let mut s = String::new();
    let mut w = w;
    loop {
        s.insert(0, (b'A' + (w % 26) as u8) as char);
        if w < 26 {
            return s;
        }
        w = w / 26 - 1;
    }
}

impl ProtocolRecord {
    pub fn question_letters(&self) -> Vec<String> {
        self.questions.iter().map(|&w| word_letter(w)).collect()
    }

    pub fn answer_words(&self) -> Vec<&'static str> {
        self.answers.iter().map(|&a| if a == YES { "yes" } else { "no" }).collect()
    }

    pub const CSV_HEADER: &'static str = "held,target_slot,target_id,questions,answers,guess,reward";

    pub fn to_csv(&self) -> String {
        let join = |v: Vec<String>| v.join(" ");
        format!(
            "{},{},{},{},{},{},{}",
            join(self.held.iter().map(|h| h.to_string()).collect()),
            self.target_slot,
            self.target_id,
            join(self.question_letters()),
            self.answer_words().join(" "),
            self.guess,
            self.reward
        )
    }
}

/// Plays `count` fresh games greedily and keeps the full transcripts.
pub fn record_protocols(
    asker: &mut dyn Policy,
    answerer: &mut dyn Policy,
    pool: &ImagePool,
    n_images: usize,
    count: usize,
    rng: &mut impl Rng,
) -> Result<Vec<ProtocolRecord>> {
    let mut out = Vec::with_capacity(count);
    let mut left = count;
    while left > 0 {
        let b = left.min(EVAL_CHUNK);
        let mut batch = (0..b)
            .map(|_| new_episode(pool, n_images, rng, Split::Eval))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        play_batch(asker, answerer, pool, &mut batch)?;
        out.extend(batch.into_iter().map(|e| ProtocolRecord {
            target_id: e.target_id(),
            target_slot: e.target,
            guess: e.transcript.guess.unwrap_or(0),
            reward: e.transcript.reward.unwrap_or(0),
            questions: e.transcript.questions,
            answers: e.transcript.answers,
            held: e.held,
        }));
        left -= b;
    }
    Ok(out)
}
