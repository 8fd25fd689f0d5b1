use super::Result;
use crate::trainer::{MetricsRow, Trainer, TrainerConfig};

/// One arm of a paired run.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationArm {
    pub zero_answerer_state: bool,
    pub rows: Vec<MetricsRow>,
    /// Largest |h| entering the answerer over every step of the run.
    pub answerer_incoming_max: f32,
    pub answerer_steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub seed: u64,
    pub baseline: AblationArm,
    pub ablated: AblationArm,
}

fn arm(config: &TrainerConfig, zero: bool, seed: u64) -> Result<AblationArm> {
    let mut t = Trainer::new(TrainerConfig {
        seed,
        zero_answerer_state: zero,
        ..config.clone()
    })?;
    let mut out = AblationArm {
        zero_answerer_state: zero,
        rows: Vec::with_capacity(config.epochs),
        answerer_incoming_max: 0.0,
        answerer_steps: 0,
    };
    while !t.is_done() {
        out.rows.push(t.train_epoch()?);
        let inst = t.instruments();
        out.answerer_incoming_max = out.answerer_incoming_max.max(inst.answerer_incoming_max);
        out.answerer_steps += inst.answerer_steps;
    }
    Ok(out)
}

/// Trains each seed twice, with and without zeroing the answerer's
/// recurrent carry-over.
pub fn run_ablation(config: &TrainerConfig, seeds: &[u64]) -> Result<Vec<AblationRun>> {
    seeds
        .iter()
        .map(|&seed| {
            Ok(AblationRun {
                seed,
                baseline: arm(config, false, seed)?,
                ablated: arm(config, true, seed)?,
            })
        })
        .collect()
}
