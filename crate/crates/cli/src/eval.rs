use std::path::Path;

use gwdial::game::{generate_synthetic_pool, Split};
use gwdial::trainer::{build_pool, evaluate, Checkpoint, EvalSummary, NeuralPolicy};
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

use crate::error::{runtime, Result};

/// Greedy evaluation of a checkpoint on its own pool.
pub fn cmd_eval(checkpoint: &Path, episodes: usize, seed: u64, split: Split) -> Result<EvalSummary> {
    let ck = Checkpoint::load(checkpoint).map_err(runtime)?;
    let pool = build_pool(&ck.config).map_err(runtime)?;
    let mut rng = SplitMix64::seed_from_u64(seed);
    evaluate(
        &mut NeuralPolicy::new(&ck.asker),
        &mut NeuralPolicy::new(&ck.answerer).with_zero_state(ck.config.zero_answerer_state),
        &pool,
        ck.config.n_images,
        episodes,
        split,
        &mut rng,
    )
    .map_err(runtime)
}

/// Writes a synthetic pool as PPM files plus `manifest.json`.
pub fn cmd_gendata(count: usize, seed: u64, out: &Path) -> Result<()> {
    let pool = generate_synthetic_pool(count, seed).map_err(|e| crate::error::CliError::Usage(e.to_string()))?;
    pool.export(out).map_err(runtime)
}
