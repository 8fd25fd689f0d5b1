use rand::Rng;

use super::{AnalysisError, Result};
use crate::game::{new_episode, schedule_for, Episode, ImagePool, Speaker, Split};
use crate::trainer::{Policy, TurnInput, EVAL_CHUNK, NO, YES};

fn second_question(asker: &mut dyn Policy, pool: &ImagePool, episodes: &[Episode], first_answer: usize) -> Result<Vec<usize>> {
    asker.reset(episodes.len())?;
    asker.act(&TurnInput {
        t: 0,
        speaker: Speaker::Asker,
        pool,
        episodes,
        incoming: None,
    })?;
    let answers = vec![first_answer; episodes.len()];
    Ok(asker
        .act(&TurnInput {
            t: 2,
            speaker: Speaker::Asker,
            pool,
            episodes,
            incoming: Some(&answers),
        })?
        .words)
}

/// Fraction of sampled held-image sets where the asker's second question
/// changes with the first answer (yes vs. no), all else fixed.
pub fn homograph_rate(
    asker: &mut dyn Policy,
    pool: &ImagePool,
    n_images: usize,
    contexts: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let schedule = schedule_for(n_images)?;
    if schedule.rounds() < 2 {
        return Err(AnalysisError::Shape(format!(
            "a game with {n_images} images has {} question round(s); homographs need 2",
            schedule.rounds()
        )));
    }
    if contexts == 0 {
        return Err(AnalysisError::Shape("need at least one context".into()));
    }
    let mut differ = 0usize;
    let mut left = contexts;
    while left > 0 {
        let b = left.min(EVAL_CHUNK);
        let batch = (0..b)
            .map(|_| new_episode(pool, n_images, rng, Split::Eval))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let after_yes = second_question(asker, pool, &batch, YES)?;
        let after_no = second_question(asker, pool, &batch, NO)?;
        differ += after_yes.iter().zip(&after_no).filter(|(a, b)| a != b).count();
        left -= b;
    }
    Ok(differ as f64 / contexts as f64)
}
