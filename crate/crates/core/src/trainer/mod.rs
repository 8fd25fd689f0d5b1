//! Centralized training of the two agents: coupled rollouts where message
//! gradients cross between them, TD targets from frozen copies, RMSProp,
//! greedy evaluation, checkpoints, and per-epoch metrics.

mod checkpoint;
mod config;
mod metrics;
mod policy;
mod rollout;

pub use checkpoint::{skeleton, Checkpoint, TensorEntry, FORMAT_VERSION, MAGIC};
pub use config::TrainerConfig;
pub use metrics::{MetricsRow, METRICS_HEADER};
pub use policy::{
    evaluate, play_batch, AlwaysYes, AnswerBlindAsker, AnswerCopyingAsker, AttributeAnswerer, EvalSummary,
    NeuralPolicy, PerfectAsker, Policy, RandomAsker, TurnInput, TurnOutput, EVAL_CHUNK, NO, YES,
};
pub use rollout::{
    answerer_observation, asker_observation, compute_losses, rollout_batch, DrawSource, Draws, EpisodeBatch,
    Replayer, RolloutOptions, Sampler, StepRecord, Team,
};

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use thiserror::Error;

use crate::agent::{build_agent, AgentError, AgentModel, Mode, NoiseSchedule, Role};
use crate::game::{generate_synthetic_pool, load_image_pool, new_episode, GameError, ImagePool, Speaker, Split};
use crate::tensor::optim::RmsProp;
use crate::tensor::{Graph, TensorError};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    NotACheckpoint,
    #[error("unsupported checkpoint version ({0})")]
    Version(String),
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("checkpoint tensor {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("bad checkpoint header: {0}")]
    Header(String),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config key {key}: {reason}")]
    Config { key: String, reason: String },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("losses need a train-mode batch")]
    EvalBatch,
    #[error("replay: {0}")]
    Replay(String),
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

/// Frozen copies of both agents used for bootstrap targets.
#[derive(Debug, Clone)]
pub struct TargetNetworks {
    pub asker: AgentModel<f32>,
    pub answerer: AgentModel<f32>,
}

/// Refreshes the targets from the live models when `epoch` is a multiple
/// of `period`. Returns whether a copy happened.
pub fn sync_target(
    asker: &AgentModel<f32>,
    answerer: &AgentModel<f32>,
    targets: &mut TargetNetworks,
    epoch: usize,
    period: usize,
) -> bool {
    if period == 0 || !epoch.is_multiple_of(period) {
        return false;
    }
    targets.asker = asker.clone();
    targets.answerer = answerer.clone();
    true
}

/// Builds the image pool a config describes.
pub fn build_pool(config: &TrainerConfig) -> Result<ImagePool> {
    let pool = match &config.pool_dir {
        Some(dir) => load_image_pool(Path::new(dir), config.split_fraction, config.pool_seed)?,
        None => {
            let p = generate_synthetic_pool(config.pool_count, config.pool_seed)?;
            match config.split_fraction {
                Some(f) => p.with_split(f, config.pool_seed)?,
                None => p,
            }
        }
    };
    Ok(pool)
}

/// Seed of the evaluation stream after `epoch`; independent of training draws.
pub fn eval_seed(seed: u64, epoch: usize) -> u64 {
    let mut s = SplitMix64::seed_from_u64(seed ^ 0x6576_616c_7365_6564);
    for _ in 0..(epoch % 7) {
        let _ = rand::RngCore::next_u64(&mut s);
    }
    rand::RngCore::next_u64(&mut s).wrapping_add(epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Global L2 norm of every gradient in both stores.
fn grad_norm(models: [&AgentModel<f32>; 2]) -> f64 {
    models
        .iter()
        .flat_map(|m| m.store().entries())
        .filter_map(|e| e.tensor.grad())
        .flat_map(|g| g.iter())
        .map(|&v| (v as f64) * (v as f64))
        .sum::<f64>()
        .sqrt()
}

fn scale_grads(model: &mut AgentModel<f32>, factor: f32) -> Result<()> {
    for e in model.store_mut().entries_mut() {
        if let Some(g) = e.tensor.grad() {
            let scaled = g.iter().map(|v| v * factor).collect();
            e.tensor.set_grad(scaled)?;
        }
    }
    Ok(())
}

/// One training run's mutable state.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainerConfig,
    pool: ImagePool,
    schedule: NoiseSchedule,
    pub asker: AgentModel<f32>,
    pub answerer: AgentModel<f32>,
    pub targets: TargetNetworks,
    opt_asker: RmsProp<f32>,
    opt_answerer: RmsProp<f32>,
    rng: SplitMix64,
    next_epoch: usize,
    started: Instant,
    instruments: Instruments,
}

/// Recurrent state observed entering each agent, maximum |h| over every
/// step of the last epoch (training batch and any evaluation).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Instruments {
    pub asker_incoming_max: f32,
    pub answerer_incoming_max: f32,
    pub answerer_steps: usize,
}

impl Trainer {
    pub fn new(config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let pool = build_pool(&config)?;
        Self::with_pool(config, pool)
    }

    /// Fresh models initialized from the run's single random stream.
    pub fn with_pool(config: TrainerConfig, pool: ImagePool) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule()?;
        let mut rng = SplitMix64::seed_from_u64(config.seed);
        let build = |role, rng: &mut SplitMix64| {
            build_agent::<f32>(
                role,
                config.n_images,
                pool.pixels(),
                config.ask_vocab,
                config.answer_vocab,
                config.arch(),
                rng,
            )
        };
        let asker = build(Role::Asker, &mut rng)?;
        let answerer = build(Role::Answerer, &mut rng)?;
        Ok(Self {
            opt_asker: RmsProp::new(asker.store(), config.learning_rate),
            opt_answerer: RmsProp::new(answerer.store(), config.learning_rate),
            targets: TargetNetworks {
                asker: asker.clone(),
                answerer: answerer.clone(),
            },
            asker,
            answerer,
            config,
            pool,
            schedule,
            rng,
            next_epoch: 0,
            started: Instant::now(),
            instruments: Instruments::default(),
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn pool(&self) -> &ImagePool {
        &self.pool
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn instruments(&self) -> Instruments {
        self.instruments
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.config.epochs
    }

    /// Sync, roll out, backpropagate through both agents, and take one
    /// RMSProp step each. Evaluates afterwards when the cadence says so.
    pub fn train_epoch(&mut self) -> Result<MetricsRow> {
        let epoch = self.next_epoch;
        let sigma = self.schedule.sigma_for_epoch(epoch)?;
        let c = &self.config;
        sync_target(&self.asker, &self.answerer, &mut self.targets, epoch, c.target_period);

        let episodes = (0..c.batch_size)
            .map(|_| new_episode(&self.pool, c.n_images, &mut self.rng, Split::Train))
            .collect::<std::result::Result<Vec<_>, _>>()?;

        let mut g = Graph::new();
        let live_a = self.asker.store().bind(&mut g)?;
        let live_b = self.answerer.store().bind(&mut g)?;
        let tgt_a = self.targets.asker.store().bind_frozen(&mut g)?;
        let tgt_b = self.targets.answerer.store().bind_frozen(&mut g)?;
        let opts = RolloutOptions {
            mode: Mode::Train,
            sigma,
            epsilon: c.epsilon,
            zero_answerer_state: c.zero_answerer_state,
            detach_messages: c.detach_messages,
        };
        let mut sampler = Sampler::new(&mut self.rng);
        let batch = rollout_batch(
            &mut g,
            Team {
                asker: &self.asker,
                asker_bound: &live_a,
                answerer: &self.answerer,
                answerer_bound: &live_b,
            },
            Some(Team {
                asker: &self.targets.asker,
                asker_bound: &tgt_a,
                answerer: &self.targets.answerer,
                answerer_bound: &tgt_b,
            }),
            &self.pool,
            episodes,
            opts,
            &mut sampler,
        )?;
        let mut inst = Instruments::default();
        for step in &batch.steps {
            let (h1, h2) = &step.incoming_hidden;
            let m = h1.data().iter().chain(h2.data()).fold(0.0f32, |m, v| m.max(v.abs()));
            if step.speaker == Speaker::Answerer {
                inst.answerer_incoming_max = inst.answerer_incoming_max.max(m);
                inst.answerer_steps += 1;
            } else {
                inst.asker_incoming_max = inst.asker_incoming_max.max(m);
            }
        }
        let loss = compute_losses(&mut g, &batch, c.gamma)?;
        let train_loss = g.value(loss).data()[0] as f64;
        g.backward(loss)?;

        for u in &batch.asker_stats {
            u.apply(self.asker.store_mut());
        }
        for u in &batch.answerer_stats {
            u.apply(self.answerer.store_mut());
        }
        self.asker.store_mut().absorb_grads(&g, &live_a)?;
        self.answerer.store_mut().absorb_grads(&g, &live_b)?;
        drop(g);

        let mut clip_events = 0;
        let norm = grad_norm([&self.asker, &self.answerer]);
        if !norm.is_finite() {
            return Err(TensorError::NonFinite { op: "gradient norm" }.into());
        }
        if self.config.grad_clip > 0.0 && norm > self.config.grad_clip {
            let f = (self.config.grad_clip / norm) as f32;
            scale_grads(&mut self.asker, f)?;
            scale_grads(&mut self.answerer, f)?;
            clip_events = 1;
        }
        self.opt_asker.step(self.asker.store_mut())?;
        self.opt_answerer.step(self.answerer.store_mut())?;
        self.asker.store_mut().zero_grads();
        self.answerer.store_mut().zero_grads();

        let (eval_reward_mean, eval_reward_stderr) = if self.config.evaluates_after(epoch) {
            let (s, seen) = self.evaluate_instrumented(self.config.eval_episodes, eval_seed(self.config.seed, epoch))?;
            inst.asker_incoming_max = inst.asker_incoming_max.max(seen.0);
            inst.answerer_incoming_max = inst.answerer_incoming_max.max(seen.1);
            (Some(s.mean), Some(s.stderr))
        } else {
            (None, None)
        };
        self.instruments = inst;
        self.next_epoch += 1;
        Ok(MetricsRow {
            epoch,
            sigma,
            epsilon: self.config.epsilon,
            train_loss,
            eval_reward_mean,
            eval_reward_stderr,
            grad_clip_events: clip_events,
            wall_time_s: if self.config.record_wall_time {
                self.started.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }

    /// Greedy play on the evaluation split; never mutates the models.
    pub fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalSummary> {
        Ok(self.evaluate_instrumented(episodes, seed)?.0)
    }

    /// Also reports the largest incoming |h| seen by (asker, answerer).
    fn evaluate_instrumented(&self, episodes: usize, seed: u64) -> Result<(EvalSummary, (f32, f32))> {
        let mut asker = NeuralPolicy::new(&self.asker);
        let mut answerer = NeuralPolicy::new(&self.answerer).with_zero_state(self.config.zero_answerer_state);
        let mut rng = SplitMix64::seed_from_u64(seed);
        let s = evaluate(
            &mut asker,
            &mut answerer,
            &self.pool,
            self.config.n_images,
            episodes,
            Split::Eval,
            &mut rng,
        )?;
        Ok((s, (asker.incoming_state_max, answerer.incoming_state_max)))
    }

    /// Trains until `epoch` (exclusive) or the end of the run, handing each
    /// row to `sink`.
    pub fn run_until(&mut self, epoch: usize, mut sink: impl FnMut(&MetricsRow) -> Result<()>) -> Result<()> {
        while self.next_epoch < epoch.min(self.config.epochs) {
            let row = self.train_epoch()?;
            sink(&row)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            image_pixels: self.pool.pixels(),
            epoch: self.next_epoch,
            rng: self.rng.clone(),
            asker: self.asker.clone(),
            answerer: self.answerer.clone(),
            target_asker: self.targets.asker.clone(),
            target_answerer: self.targets.answerer.clone(),
            opt_asker: self.opt_asker.clone(),
            opt_answerer: self.opt_answerer.clone(),
        }
    }

    /// Continues a run from a checkpoint on the given pool.
    pub fn resume(ck: Checkpoint, pool: ImagePool) -> Result<Self> {
        ck.config.validate()?;
        ck.check_compatible(&ck.config, pool.pixels())?;
        if ck.image_pixels != pool.pixels() {
            return Err(CheckpointError::ShapeMismatch {
                name: "image".into(),
                expected: vec![pool.pixels()],
                found: vec![ck.image_pixels],
            }
            .into());
        }
        let schedule = ck.config.schedule()?;
        Ok(Self {
            schedule,
            pool,
            asker: ck.asker,
            answerer: ck.answerer,
            targets: TargetNetworks {
                asker: ck.target_asker,
                answerer: ck.target_answerer,
            },
            opt_asker: ck.opt_asker,
            opt_answerer: ck.opt_answerer,
            rng: ck.rng,
            next_epoch: ck.epoch,
            config: ck.config,
            started: Instant::now(),
            instruments: Instruments::default(),
        })
    }
}
