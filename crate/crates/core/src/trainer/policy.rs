use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::rollout::{answerer_observation, asker_observation};
use super::{Result, TrainError};
use crate::agent::{argmax, AgentModel, AgentState, Mode, Role};
use crate::game::{new_episode, Episode, ImagePool, Speaker, Split};
use crate::tensor::nn::Bound;
use crate::tensor::{Graph, Tensor};

/// Answer word meaning "yes"; word 1 is "no".
pub const YES: usize = 0;
pub const NO: usize = 1;

/// What one agent sees at its turn: its own observation source and the
/// counterpart's last discrete word (nothing else crosses between agents).
pub struct TurnInput<'a> {
    pub t: usize,
    pub speaker: Speaker,
    pub pool: &'a ImagePool,
    pub episodes: &'a [Episode],
    pub incoming: Option<&'a [usize]>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnOutput {
    pub actions: Vec<usize>,
    pub words: Vec<usize>,
}

/// A decentralized, batched agent for evaluation and analysis.
pub trait Policy {
    fn reset(&mut self, batch: usize) -> Result<()>;
    fn act(&mut self, input: &TurnInput<'_>) -> Result<TurnOutput>;
}

/// A trained network acting greedily with one-hot messages and
/// running-statistic batch norm.
pub struct NeuralPolicy<'m> {
    model: &'m AgentModel<f32>,
    zero_state: bool,
    graph: Graph<f32>,
    bound: Option<Bound>,
    state: Option<AgentState>,
    /// Largest |h| the network has received at any step.
    pub incoming_state_max: f32,
}

impl<'m> NeuralPolicy<'m> {
    pub fn new(model: &'m AgentModel<f32>) -> Self {
        Self {
            model,
            zero_state: false,
            graph: Graph::new(),
            bound: None,
            state: None,
            incoming_state_max: 0.0,
        }
    }

    /// Restart from an all-zero recurrent state at every step.
    pub fn with_zero_state(mut self, on: bool) -> Self {
        self.zero_state = on;
        self
    }
}

impl Policy for NeuralPolicy<'_> {
    fn reset(&mut self, batch: usize) -> Result<()> {
        self.graph = Graph::new();
        self.bound = Some(self.model.store().bind_frozen(&mut self.graph)?);
        self.state = Some(self.model.fresh_state(&mut self.graph, batch)?);
        Ok(())
    }

    fn act(&mut self, input: &TurnInput<'_>) -> Result<TurnOutput> {
        let (Some(bound), Some(state)) = (&self.bound, self.state.as_mut()) else {
            return Err(TrainError::Shape("policy used before reset".into()));
        };
        let g = &mut self.graph;
        let batch = input.episodes.len();
        if self.zero_state {
            *state = self.model.fresh_state(g, batch)?;
        }
        let seen = g.value(state.h1).data().iter().chain(g.value(state.h2).data()).fold(0.0f32, |m, v| m.max(v.abs()));
        self.incoming_state_max = self.incoming_state_max.max(seen);
        let obs = match self.model.role {
            Role::Asker => asker_observation(input.pool, input.episodes),
            Role::Answerer => answerer_observation(input.pool, input.episodes),
        };
        let obs = g.constant_owned(obs)?;
        let incoming = match input.incoming {
            Some(words) => {
                let v = self.model.in_vocab;
                let mut t = Tensor::zeros(vec![batch, v]);
                for (r, &w) in words.iter().enumerate() {
                    if w >= v {
                        return Err(TrainError::Shape(format!("word {w} outside a vocabulary of {v}")));
                    }
                    t.data_mut()[r * v + w] = 1.0;
                }
                Some(g.constant_owned(t)?)
            }
            None => None,
        };
        let out = self.model.step(g, bound, state, obs, incoming, Mode::Eval)?;
        let q = g.value(out.q);
        let m = g.value(out.m);
        let actions: Vec<usize> = (0..batch).map(|r| argmax(q.row(r))).collect();
        let words = (0..batch).map(|r| argmax(m.row(r))).collect();
        *state = out.state;
        state.prev_action = actions.iter().map(|&a| Some(a)).collect();
        Ok(TurnOutput { actions, words })
    }
}

fn constant(batch: usize, action: usize, word: usize) -> TurnOutput {
    TurnOutput {
        actions: vec![action; batch],
        words: vec![word; batch],
    }
}

/// Cheats by reading the target slot. Harness check only.
pub struct PerfectAsker;

impl Policy for PerfectAsker {
    fn reset(&mut self, _batch: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, input: &TurnInput<'_>) -> Result<TurnOutput> {
        Ok(TurnOutput {
            actions: input.episodes.iter().map(|e| e.target).collect(),
            words: vec![0; input.episodes.len()],
        })
    }
}

/// Uniform questions and guesses.
pub struct RandomAsker {
    rng: SplitMix64,
    vocab: usize,
}

impl RandomAsker {
    pub fn new(seed: u64, vocab: usize) -> Self {
        Self {
            rng: SplitMix64::seed_from_u64(seed),
            vocab: vocab.max(1),
        }
    }
}

impl Policy for RandomAsker {
    fn reset(&mut self, _batch: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, input: &TurnInput<'_>) -> Result<TurnOutput> {
        let mut out = TurnOutput {
            actions: Vec::new(),
            words: Vec::new(),
        };
        for e in input.episodes {
            out.actions.push(self.rng.random_range(0..e.n()));
            out.words.push(self.rng.random_range(0..self.vocab));
        }
        Ok(out)
    }
}

pub struct AlwaysYes;

impl Policy for AlwaysYes {
    fn reset(&mut self, _batch: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, input: &TurnInput<'_>) -> Result<TurnOutput> {
        Ok(constant(input.episodes.len(), 0, YES))
    }
}

/// Answers question `w` with the target's attribute `w mod 5`.
pub struct AttributeAnswerer;

impl Policy for AttributeAnswerer {
    fn reset(&mut self, _batch: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, input: &TurnInput<'_>) -> Result<TurnOutput> {
        let questions = input
            .incoming
            .ok_or_else(|| TrainError::Shape("the answerer spoke before any question".into()))?;
        let mut words = Vec::with_capacity(questions.len());
        for (e, &q) in input.episodes.iter().zip(questions) {
            let attrs = input
                .pool
                .attributes(e.target_id())
                .ok_or_else(|| TrainError::Shape("pool has no attribute labels".into()))?;
            words.push(if attrs[q % attrs.len()] { YES } else { NO });
        }
        Ok(TurnOutput {
            actions: vec![0; words.len()],
            words,
        })
    }
}

/// Asks question `round` in round `round` whatever the answers were, then
/// guesses slot 0.
pub struct AnswerBlindAsker {
    round: usize,
    vocab: usize,
}

impl AnswerBlindAsker {
    pub fn new(vocab: usize) -> Self {
        Self { round: 0, vocab: vocab.max(1) }
    }
}

impl Policy for AnswerBlindAsker {
    fn reset(&mut self, _batch: usize) -> Result<()> {
        self.round = 0;
        Ok(())
    }

    fn act(&mut self, input: &TurnInput<'_>) -> Result<TurnOutput> {
        let w = self.round % self.vocab;
        self.round += 1;
        Ok(constant(input.episodes.len(), 0, w))
    }
}

/// First question is word 0; later questions repeat the last answer word.
pub struct AnswerCopyingAsker;

impl Policy for AnswerCopyingAsker {
    fn reset(&mut self, _batch: usize) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, input: &TurnInput<'_>) -> Result<TurnOutput> {
        let b = input.episodes.len();
        Ok(TurnOutput {
            actions: vec![0; b],
            words: input.incoming.map_or_else(|| vec![0; b], <[usize]>::to_vec),
        })
    }
}

/// Plays `episodes` to the end with two decentralized policies, filling
/// each transcript and reward.
pub fn play_batch(
    asker: &mut dyn Policy,
    answerer: &mut dyn Policy,
    pool: &ImagePool,
    episodes: &mut [Episode],
) -> Result<()> {
    let Some(first) = episodes.first() else {
        return Ok(());
    };
    let schedule = first.schedule.clone();
    if episodes.iter().any(|e| e.schedule != schedule) {
        return Err(TrainError::Shape("episodes in a batch must share one schedule".into()));
    }
    asker.reset(episodes.len())?;
    answerer.reset(episodes.len())?;
    let mut last_question: Option<Vec<usize>> = None;
    let mut last_answer: Option<Vec<usize>> = None;
    for (t, &speaker) in schedule.speakers.iter().enumerate() {
        let incoming = match speaker {
            Speaker::Answerer => last_question.as_deref(),
            _ => last_answer.as_deref(),
        };
        let input = TurnInput {
            t,
            speaker,
            pool,
            episodes,
            incoming,
        };
        let out = match speaker {
            Speaker::Answerer => answerer.act(&input)?,
            _ => asker.act(&input)?,
        };
        if out.actions.len() != episodes.len() || out.words.len() != episodes.len() {
            return Err(TrainError::Shape("policy output does not match the batch".into()));
        }
        match speaker {
            Speaker::Asker => {
                for (e, &w) in episodes.iter_mut().zip(&out.words) {
                    e.transcript.questions.push(w);
                }
                last_question = Some(out.words);
            }
            Speaker::Answerer => {
                for (e, &w) in episodes.iter_mut().zip(&out.words) {
                    e.transcript.answers.push(w);
                }
                last_answer = Some(out.words);
            }
            Speaker::AskerGuess => {
                for (e, &a) in episodes.iter_mut().zip(&out.actions) {
                    e.score_guess(a)?;
                }
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub mean: f64,
    pub stderr: f64,
    pub rewards: Vec<u8>,
}

impl EvalSummary {
    pub fn from_rewards(rewards: Vec<u8>) -> Self {
        let n = rewards.len() as f64;
        let mean = rewards.iter().map(|&r| r as f64).sum::<f64>() / n;
        let stderr = if rewards.len() > 1 {
            let var = rewards.iter().map(|&r| (r as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, rewards }
    }
}

pub const EVAL_CHUNK: usize = 500;

/// Fresh episodes played greedily by two policies: mean team reward and
/// its standard error.
pub fn evaluate(
    asker: &mut dyn Policy,
    answerer: &mut dyn Policy,
    pool: &ImagePool,
    n_images: usize,
    episodes: usize,
    split: Split,
    rng: &mut impl Rng,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(TrainError::Shape("evaluation needs at least one episode".into()));
    }
    let mut rewards = Vec::with_capacity(episodes);
    let mut left = episodes;
    while left > 0 {
        let b = left.min(EVAL_CHUNK);
        let mut batch = (0..b)
            .map(|_| new_episode(pool, n_images, rng, split))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        play_batch(asker, answerer, pool, &mut batch)?;
        rewards.extend(batch.iter().map(|e| e.transcript.reward.unwrap_or(0)));
        left -= b;
    }
    Ok(EvalSummary::from_rewards(rewards))
}
