use super::{Result, TrainError};

pub const METRICS_HEADER: &str =
    "epoch,sigma,epsilon,train_loss,eval_reward_mean,eval_reward_stderr,grad_clip_events,wall_time_s";

/// One CSV row per epoch. Evaluation columns are empty on epochs without
/// an evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub sigma: f64,
    pub epsilon: f64,
    pub train_loss: f64,
    pub eval_reward_mean: Option<f64>,
    pub eval_reward_stderr: Option<f64>,
    pub grad_clip_events: usize,
    pub wall_time_s: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch,
            self.sigma,
            self.epsilon,
            self.train_loss,
            opt(self.eval_reward_mean),
            opt(self.eval_reward_stderr),
            self.grad_clip_events,
            self.wall_time_s
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        let bad = |what: &str| TrainError::Shape(format!("metrics row {line:?}: bad {what}"));
        if cols.len() != 8 {
            return Err(bad("column count"));
        }
        let f = |i: usize, name: &str| cols[i].parse::<f64>().map_err(|_| bad(name));
        let o = |i: usize, name: &str| {
            if cols[i].is_empty() {
                Ok(None)
            } else {
                cols[i].parse::<f64>().map(Some).map_err(|_| bad(name))
            }
        };
        Ok(Self {
            epoch: cols[0].parse().map_err(|_| bad("epoch"))?,
            sigma: f(1, "sigma")?,
            epsilon: f(2, "epsilon")?,
            train_loss: f(3, "train_loss")?,
            eval_reward_mean: o(4, "eval_reward_mean")?,
            eval_reward_stderr: o(5, "eval_reward_stderr")?,
            grad_clip_events: cols[6].parse().map_err(|_| bad("grad_clip_events"))?,
            wall_time_s: f(7, "wall_time_s")?,
        })
    }
}
