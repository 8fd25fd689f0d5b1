use rand::Rng;

use super::{Result, TrainError};
use crate::agent::{argmax, dru_eval, dru_train, sample_noise, select_action, AgentModel, AgentState, Mode, Role};
use crate::game::{Episode, ImagePool, Speaker};
use crate::tensor::nn::{Bound, StatUpdate};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Every random choice a training rollout made, in consumption order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Draws<T> {
    /// Channel noise, one block per message-emitting step.
    pub noise: Vec<Tensor<T>>,
    /// Asker actions, one vector per asker step.
    pub actions: Vec<Vec<usize>>,
}

/// Where a training rollout gets its channel noise and exploratory actions.
pub trait DrawSource<T: Real> {
    fn noise(&mut self, rows: usize, cols: usize, sigma: f64) -> Result<Tensor<T>>;
    fn actions(&mut self, q: &Tensor<T>, epsilon: f64) -> Result<Vec<usize>>;
}

/// Samples from an rng and records what it drew.
pub struct Sampler<'a, R, T> {
    rng: &'a mut R,
    pub recorded: Draws<T>,
}

impl<'a, R: Rng, T: Real> Sampler<'a, R, T> {
    pub fn new(rng: &'a mut R) -> Self {
        Self {
            rng,
            recorded: Draws {
                noise: Vec::new(),
                actions: Vec::new(),
            },
        }
    }
}

impl<R: Rng, T: Real> DrawSource<T> for Sampler<'_, R, T> {
    fn noise(&mut self, rows: usize, cols: usize, sigma: f64) -> Result<Tensor<T>> {
        let n = sample_noise(rows, cols, sigma, self.rng);
        self.recorded.noise.push(n.clone());
        Ok(n)
    }

    fn actions(&mut self, q: &Tensor<T>, epsilon: f64) -> Result<Vec<usize>> {
        let a = (0..q.rows())
            .map(|r| select_action(q.row(r), epsilon, self.rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        self.recorded.actions.push(a.clone());
        Ok(a)
    }
}

/// Plays back a recorded [`Draws`], so the same rollout can be rebuilt with
/// different parameter values (finite differences).
pub struct Replayer<'a, T> {
    draws: &'a Draws<T>,
    noise_at: usize,
    action_at: usize,
}

impl<'a, T> Replayer<'a, T> {
    pub fn new(draws: &'a Draws<T>) -> Self {
        Self {
            draws,
            noise_at: 0,
            action_at: 0,
        }
    }
}

impl<T: Real> DrawSource<T> for Replayer<'_, T> {
    fn noise(&mut self, rows: usize, cols: usize, _sigma: f64) -> Result<Tensor<T>> {
        let n = self
            .draws
            .noise
            .get(self.noise_at)
            .ok_or_else(|| TrainError::Replay("ran out of recorded noise".into()))?;
        if n.shape() != [rows, cols] {
            return Err(TrainError::Replay(format!("recorded noise is {:?}, need {rows} x {cols}", n.shape())));
        }
        self.noise_at += 1;
        Ok(n.clone())
    }

    fn actions(&mut self, q: &Tensor<T>, _epsilon: f64) -> Result<Vec<usize>> {
        let a = self
            .draws
            .actions
            .get(self.action_at)
            .ok_or_else(|| TrainError::Replay("ran out of recorded actions".into()))?;
        if a.len() != q.rows() || a.iter().any(|&u| u >= q.cols()) {
            return Err(TrainError::Replay("recorded actions do not fit the Q-values".into()));
        }
        self.action_at += 1;
        Ok(a.clone())
    }
}

/// Both agents plus their bindings on the rollout graph.
#[derive(Clone, Copy)]
pub struct Team<'a, T> {
    pub asker: &'a AgentModel<T>,
    pub asker_bound: &'a Bound,
    pub answerer: &'a AgentModel<T>,
    pub answerer_bound: &'a Bound,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub mode: Mode,
    pub sigma: f64,
    pub epsilon: f64,
    pub zero_answerer_state: bool,
    pub detach_messages: bool,
}

#[derive(Debug, Clone)]
pub struct StepRecord<T> {
    pub t: usize,
    pub speaker: Speaker,
    pub observation: Var,
    /// Recurrent state the agent received at this step (layer 1, layer 2).
    pub incoming_hidden: (Tensor<T>, Tensor<T>),
    pub q: Var,
    pub actions: Vec<usize>,
    /// Message logits.
    pub m: Var,
    /// What went over the channel; `None` on the guess step.
    pub m_hat: Option<Var>,
    /// Target-network Q at this step (asker steps, train mode only).
    pub target_q: Option<Tensor<T>>,
}

/// One batch of parallel episodes sharing `T` and σ, with every forward
/// intermediate left on the graph.
#[derive(Debug, Clone)]
pub struct EpisodeBatch<T> {
    pub mode: Mode,
    pub sigma: f64,
    pub episodes: Vec<Episode>,
    pub steps: Vec<StepRecord<T>>,
    /// Team reward per episode (identical for both agents).
    pub rewards: Vec<u8>,
    pub asker_stats: Vec<StatUpdate<T>>,
    pub answerer_stats: Vec<StatUpdate<T>>,
}

impl<T> EpisodeBatch<T> {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn steps_of(&self, speaker: Speaker) -> impl Iterator<Item = &StepRecord<T>> {
        self.steps.iter().filter(move |s| s.speaker == speaker)
    }

    pub fn asker_steps(&self) -> impl Iterator<Item = &StepRecord<T>> {
        self.steps.iter().filter(|s| s.speaker != Speaker::Answerer)
    }
}

/// Row-major `B x (n·pixels)` block of each episode's held images.
pub fn asker_observation<T: Real>(pool: &ImagePool, episodes: &[Episode]) -> Tensor<T> {
    let px = pool.pixels();
    let n = episodes.first().map_or(0, |e| e.n());
    let mut data = Vec::with_capacity(episodes.len() * n * px);
    for e in episodes {
        for &id in &e.held {
            data.extend(pool.image(id).iter().map(|&v| T::from_f64(v as f64)));
        }
    }
    Tensor::new(vec![episodes.len(), n * px], data).expect("pixels are finite")
}

/// Row-major `B x pixels` block of each episode's target image.
pub fn answerer_observation<T: Real>(pool: &ImagePool, episodes: &[Episode]) -> Tensor<T> {
    let px = pool.pixels();
    let mut data = Vec::with_capacity(episodes.len() * px);
    for e in episodes {
        data.extend(pool.image(e.target_id()).iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::new(vec![episodes.len(), px], data).expect("pixels are finite")
}

fn check_dims<T: Real>(team: &Team<'_, T>, pool: &ImagePool, episodes: &[Episode]) -> Result<()> {
    let Some(first) = episodes.first() else {
        return Err(TrainError::Shape("empty episode batch".into()));
    };
    if team.asker.role != Role::Asker || team.answerer.role != Role::Answerer {
        return Err(TrainError::Shape("team roles are swapped".into()));
    }
    if episodes.iter().any(|e| e.schedule != first.schedule || e.n() != first.n()) {
        return Err(TrainError::Shape("episodes in a batch must share one schedule".into()));
    }
    if team.asker.n_actions != first.n() {
        return Err(TrainError::Shape(format!(
            "asker guesses among {} images, episodes hold {}",
            team.asker.n_actions,
            first.n()
        )));
    }
    if team.asker.image_inputs != first.n() * pool.pixels() || team.answerer.image_inputs != pool.pixels() {
        return Err(TrainError::Shape(format!(
            "image inputs ({}, {}) do not fit {}-pixel images",
            team.asker.image_inputs,
            team.answerer.image_inputs,
            pool.pixels()
        )));
    }
    if team.asker.out_vocab != team.answerer.in_vocab || team.answerer.out_vocab != team.asker.in_vocab {
        return Err(TrainError::Shape("the two agents disagree on vocabulary sizes".into()));
    }
    Ok(())
}

struct Runner<T> {
    asker: AgentState,
    answerer: AgentState,
    last_answer: Option<Var>,
    last_question: Option<Var>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Real> Runner<T> {
    fn new(g: &mut Graph<T>, team: &Team<'_, T>, batch: usize) -> Result<Self> {
        Ok(Self {
            asker: team.asker.fresh_state(g, batch)?,
            answerer: team.answerer.fresh_state(g, batch)?,
            last_answer: None,
            last_question: None,
            _marker: std::marker::PhantomData,
        })
    }
}

/// Runs `episodes` through their turn schedule with both agents.
///
/// In train mode messages pass through the DRU training branch with the
/// given σ and asker actions are ε-greedy; `target`, when given, is run in
/// lock-step on the same inputs to record bootstrap Q-values. In eval mode
/// messages are one-hot, actions greedy, and batch norm uses running
/// statistics. Transcripts and rewards are filled in on the returned
/// episodes.
pub fn rollout_batch<T: Real>(
    g: &mut Graph<T>,
    live: Team<'_, T>,
    target: Option<Team<'_, T>>,
    pool: &ImagePool,
    mut episodes: Vec<Episode>,
    opts: RolloutOptions,
    draws: &mut dyn DrawSource<T>,
) -> Result<EpisodeBatch<T>> {
    check_dims(&live, pool, &episodes)?;
    let train = opts.mode == Mode::Train;
    let batch = episodes.len();
    let schedule = episodes[0].schedule.clone();

    let asker_obs = g.constant_owned(asker_observation(pool, &episodes))?;
    let answerer_obs = g.constant_owned(answerer_observation(pool, &episodes))?;

    let mut run = Runner::new(g, &live, batch)?;
    let mut shadow = match &target {
        Some(t) if train => Some(Runner::new(g, t, batch)?),
        _ => None,
    };
    let mut steps = Vec::with_capacity(schedule.steps());
    let mut rewards = vec![0u8; batch];
    let (mut asker_stats, mut answerer_stats) = (Vec::new(), Vec::new());

    for (t, &speaker) in schedule.speakers.iter().enumerate() {
        let asks = speaker != Speaker::Answerer;
        let (model, bound, state, incoming, obs) = if asks {
            (live.asker, live.asker_bound, &mut run.asker, run.last_answer, asker_obs)
        } else {
            if opts.zero_answerer_state {
                run.answerer = live.answerer.fresh_state(g, batch)?;
            }
            (live.answerer, live.answerer_bound, &mut run.answerer, run.last_question, answerer_obs)
        };
        let incoming_hidden = (g.value(state.h1).clone(), g.value(state.h2).clone());
        let out = model.step(g, bound, state, obs, incoming, opts.mode)?;
        if asks {
            asker_stats.extend(out.stats);
        } else {
            answerer_stats.extend(out.stats);
        }
        *state = out.state;

        let q_value = g.value(out.q).clone();
        let actions = if !asks {
            vec![0; batch]
        } else if train {
            draws.actions(&q_value, opts.epsilon)?
        } else {
            (0..batch).map(|r| argmax(q_value.row(r))).collect()
        };
        state.prev_action = actions.iter().map(|&a| Some(a)).collect();

        let m_hat = if speaker == Speaker::AskerGuess {
            None
        } else if train {
            let noise = draws.noise(batch, model.out_vocab, opts.sigma)?;
            Some(dru_train(g, out.m, &noise)?)
        } else {
            let one_hot = dru_eval(g.value(out.m));
            Some(g.constant_owned(one_hot)?)
        };
        let sent = match m_hat {
            Some(v) if opts.detach_messages => Some(g.detach(v)?),
            other => other,
        };

        let target_q = match (&target, shadow.as_mut()) {
            (Some(tt), Some(sh)) => {
                let frozen_in = match sent {
                    Some(v) => Some(g.detach(v)?),
                    None => None,
                };
                let (tmodel, tbound, tstate, tin, tobs) = if asks {
                    (tt.asker, tt.asker_bound, &mut sh.asker, sh.last_answer, asker_obs)
                } else {
                    if opts.zero_answerer_state {
                        sh.answerer = tt.answerer.fresh_state(g, batch)?;
                    }
                    (tt.answerer, tt.answerer_bound, &mut sh.answerer, sh.last_question, answerer_obs)
                };
                let tout = tmodel.step(g, tbound, tstate, tobs, tin, Mode::Train)?;
                *tstate = tout.state;
                tstate.prev_action = actions.iter().map(|&a| Some(a)).collect();
                if asks {
                    sh.last_question = frozen_in;
                } else {
                    sh.last_answer = frozen_in;
                }
                asks.then(|| g.value(tout.q).clone())
            }
            _ => None,
        };

        match speaker {
            Speaker::Asker => {
                run.last_question = sent;
                let words = g.value(sent.expect("asker steps transmit"));
                for (r, e) in episodes.iter_mut().enumerate() {
                    e.transcript.questions.push(argmax(words.row(r)));
                }
            }
            Speaker::Answerer => {
                run.last_answer = sent;
                let words = g.value(sent.expect("answerer steps transmit"));
                for (r, e) in episodes.iter_mut().enumerate() {
                    e.transcript.answers.push(argmax(words.row(r)));
                }
            }
            Speaker::AskerGuess => {
                for (r, e) in episodes.iter_mut().enumerate() {
                    rewards[r] = e.score_guess(actions[r])?;
                }
            }
        }

        steps.push(StepRecord {
            t,
            speaker,
            observation: obs,
            incoming_hidden,
            q: out.q,
            actions,
            m: out.m,
            m_hat,
            target_q,
        });
    }

    Ok(EpisodeBatch {
        mode: opts.mode,
        sigma: opts.sigma,
        episodes,
        steps,
        rewards,
        asker_stats,
        answerer_stats,
    })
}

/// Mean squared TD error over the batch and every asker step.
///
/// The final step regresses on the team reward; earlier steps on
/// `γ · max` of the target network's Q at the next asker step. Targets are
/// constants. The answerer has a single action and contributes no Q-loss.
pub fn compute_losses<T: Real>(g: &mut Graph<T>, batch: &EpisodeBatch<T>, gamma: f64) -> Result<Var> {
    if batch.mode != Mode::Train {
        return Err(TrainError::EvalBatch);
    }
    let asker: Vec<&StepRecord<T>> = batch.asker_steps().collect();
    let b = batch.len();
    let mut total: Option<Var> = None;
    for (k, step) in asker.iter().enumerate() {
        let y: Vec<T> = match asker.get(k + 1) {
            None => batch.rewards.iter().map(|&r| T::from_f64(r as f64)).collect(),
            Some(next) => {
                let tq = next
                    .target_q
                    .as_ref()
                    .ok_or_else(|| TrainError::Shape("bootstrap step has no target-network Q".into()))?;
                (0..b)
                    .map(|r| {
                        let best = tq.row(r).iter().copied().fold(T::neg_infinity(), T::max);
                        T::from_f64(gamma) * best
                    })
                    .collect()
            }
        };
        let taken = g.pick_cols(step.q, &step.actions)?;
        let y = g.constant_owned(Tensor::new(vec![b, 1], y)?)?;
        let diff = g.sub(taken, y)?;
        let sq = g.mul(diff, diff)?;
        let s = g.sum_all(sq)?;
        total = Some(match total {
            None => s,
            Some(acc) => g.add(acc, s)?,
        });
    }
    let total = total.ok_or_else(|| TrainError::Shape("no asker steps".into()))?;
    Ok(g.scale(total, T::from_f64(1.0 / (b * asker.len()) as f64))?)
}
