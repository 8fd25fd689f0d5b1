use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::agent::{Architecture, NoiseSchedule};

/// Everything one training run depends on. Serialized flat so it doubles as
/// the run config file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub seed: u64,
    pub n_images: usize,
    pub ask_vocab: usize,
    pub answer_vocab: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub gamma: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub target_period: usize,
    /// σ at the first epoch; equal to `sigma_end` for a constant level.
    pub sigma_start: f64,
    pub sigma_end: f64,
    /// Feed the answerer an all-zero recurrent state at every step.
    pub zero_answerer_state: bool,
    /// Global gradient-norm ceiling across both agents; 0 disables.
    pub grad_clip: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Synthetic pool size, ignored when `pool_dir` is set.
    pub pool_count: usize,
    pub pool_seed: u64,
    pub pool_dir: Option<String>,
    /// Fraction of images reserved for training; `None` trains and evaluates on all.
    pub split_fraction: Option<f64>,
    pub image_hidden: usize,
    pub embed_width: usize,
    pub gru_width: usize,
    pub head_hidden: usize,
    /// Store elapsed seconds in the metrics; off keeps CSVs byte-reproducible.
    pub record_wall_time: bool,
    /// Diagnostic: cut the gradient path through transmitted messages.
    pub detach_messages: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        Self {
            seed: 0,
            n_images: 2,
            ask_vocab: 4,
            answer_vocab: 2,
            epochs: 10_000,
            batch_size: 32,
            gamma: 1.0,
            epsilon: 0.05,
            learning_rate: 5e-4,
            target_period: 100,
            sigma_start: 0.1,
            sigma_end: 1.0,
            zero_answerer_state: false,
            grad_clip: 10.0,
            eval_every: 100,
            eval_episodes: 500,
            pool_count: 24,
            pool_seed: 0,
            pool_dir: None,
            split_fraction: None,
            image_hidden: arch.image_hidden,
            embed_width: arch.embed,
            gru_width: arch.gru,
            head_hidden: arch.head_hidden,
            record_wall_time: false,
            detach_messages: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(TrainError::Config { key: key.into(), reason: why });
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", format!("{} outside [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon", format!("{} outside [0, 1]", self.epsilon));
        }
        for (key, v) in [
            ("n_images", self.n_images),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("target_period", self.target_period),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("pool_count", self.pool_count),
            ("image_hidden", self.image_hidden),
            ("embed_width", self.embed_width),
            ("gru_width", self.gru_width),
            ("head_hidden", self.head_hidden),
        ] {
            if v == 0 {
                return bad(key, "must be positive".into());
            }
        }
        if self.n_images < 2 {
            return bad("n_images", format!("need at least 2, got {}", self.n_images));
        }
        if !(2..=64).contains(&self.ask_vocab) {
            return bad("ask_vocab", format!("{} outside 2..=64", self.ask_vocab));
        }
        if self.answer_vocab != 2 {
            return bad("answer_vocab", format!("answers are yes/no, got {}", self.answer_vocab));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("{} is not a finite non-negative rate", self.learning_rate));
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return bad("grad_clip", format!("{} is not a finite non-negative norm", self.grad_clip));
        }
        for (key, v) in [("sigma_start", self.sigma_start), ("sigma_end", self.sigma_end)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, format!("{v} is not a finite non-negative level"));
            }
        }
        if let Some(f) = self.split_fraction {
            if !(0.0..=1.0).contains(&f) {
                return bad("split_fraction", format!("{f} outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn arch(&self) -> Architecture {
        Architecture {
            image_hidden: self.image_hidden,
            embed: self.embed_width,
            gru: self.gru_width,
            head_hidden: self.head_hidden,
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(NoiseSchedule::new(self.sigma_start, self.sigma_end, self.epochs)?)
    }

    /// Whether evaluation follows epoch `epoch` (every `eval_every`, and at the end).
    pub fn evaluates_after(&self, epoch: usize) -> bool {
        (epoch + 1).is_multiple_of(self.eval_every) || epoch + 1 == self.epochs
    }
}
