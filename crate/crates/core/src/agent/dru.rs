use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{AgentError, Result};
use crate::tensor::{Graph, Real, Tensor, Var};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Gaussian perturbation for a `rows x cols` block of logits. Zero `sigma`
/// still consumes draws so the stream does not depend on the noise level.
pub fn sample_noise<T: Real>(rows: usize, cols: usize, sigma: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(vec![rows, cols], |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::from_f64(sigma * z)
    })
}

/// Training branch: `softmax(m + noise)`. The noise is a recorded constant,
/// so gradients flow through the softmax into the logits.
pub fn dru_train<T: Real>(g: &mut Graph<T>, logits: Var, noise: &Tensor<T>) -> Result<Var> {
    let shifted = g.shift(logits, noise)?;
    Ok(g.softmax(shifted)?)
}

/// Evaluation branch: exact one-hot at the row argmax.
pub fn dru_eval<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let (rows, cols) = (logits.rows(), logits.cols());
    let mut out = Tensor::zeros(vec![rows, cols]);
    for r in 0..rows {
        let k = argmax(logits.row(r));
        out.data_mut()[r * cols + k] = T::one();
    }
    out
}

/// Channel noise σ rising linearly from `start` to `end` over the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub start: f64,
    pub end: f64,
    pub total_epochs: usize,
}

impl NoiseSchedule {
    pub fn new(start: f64, end: f64, total_epochs: usize) -> Result<Self> {
        if start < 0.0 || end < 0.0 || !start.is_finite() || !end.is_finite() {
            return Err(AgentError::Config(format!("noise levels must be >= 0, got {start} -> {end}")));
        }
        if total_epochs == 0 {
            return Err(AgentError::Config("noise schedule needs at least one epoch".into()));
        }
        Ok(Self { start, end, total_epochs })
    }

    pub fn constant(sigma: f64, total_epochs: usize) -> Result<Self> {
        Self::new(sigma, sigma, total_epochs)
    }

    pub fn sigma_for_epoch(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(AgentError::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        if self.total_epochs == 1 {
            return Ok(self.start);
        }
        let frac = epoch as f64 / (self.total_epochs - 1) as f64;
        Ok(self.start + (self.end - self.start) * frac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_xoshiro::SplitMix64;

    #[test]
    fn noise_free_training_branch_is_softmax() {
        let mut g = Graph::<f64>::new();
        let m = g.constant(&Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap()).unwrap();
        let mut rng = SplitMix64::seed_from_u64(0);
        let noise = sample_noise(1, 2, 0.0, &mut rng);
        let out = dru_train(&mut g, m, &noise).unwrap();
        assert_eq!(g.value(out).data(), &[0.5, 0.5]);
    }

    #[test]
    fn eval_branch_is_one_hot_argmax() {
        let m = Tensor::matrix(2, 3, vec![0.2, 1.7, -3.0, 5.0, 5.0, 1.0]).unwrap();
        assert_eq!(dru_eval(&m).data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn unit_noise_is_symmetric_on_average() {
        let mut rng = SplitMix64::seed_from_u64(42);
        let draws = 10_000;
        let mut g = Graph::<f64>::new();
        let m = g.constant(&Tensor::zeros(vec![draws, 2])).unwrap();
        let noise = sample_noise(draws, 2, 1.0, &mut rng);
        let out = dru_train(&mut g, m, &noise).unwrap();
        let firsts: Vec<f64> = g.value(out).data().chunks(2).map(|r| r[0]).collect();
        let mean = firsts.iter().sum::<f64>() / draws as f64;
        let var = firsts.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        assert!((mean - 0.5).abs() < 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn schedule_endpoints_and_midpoint() {
        let s = NoiseSchedule::new(0.1, 1.0, 101).unwrap();
        assert_eq!(s.sigma_for_epoch(0).unwrap(), 0.1);
        assert_eq!(s.sigma_for_epoch(100).unwrap(), 1.0);
        assert!((s.sigma_for_epoch(50).unwrap() - 0.55).abs() < 1e-12);
        assert!(matches!(s.sigma_for_epoch(101), Err(AgentError::EpochOutOfRange { .. })));
        assert!(NoiseSchedule::new(-0.1, 1.0, 10).is_err());
    }

    proptest! {
        #[test]
        fn training_output_is_on_simplex(
            logits in prop::collection::vec(-50.0f64..50.0, 2..12),
            sigma in 0.0f64..2.0,
            seed in any::<u64>(),
        ) {
            let k = logits.len();
            let mut g = Graph::<f64>::new();
            let m = g.constant(&Tensor::matrix(1, k, logits).unwrap()).unwrap();
            let noise = sample_noise(1, k, sigma, &mut SplitMix64::seed_from_u64(seed));
            let out = dru_train(&mut g, m, &noise).unwrap();
            let v = g.value(out).data();
            prop_assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn argmax_ignores_constant_shift(
            logits in prop::collection::vec(-10.0f64..10.0, 1..10),
            c in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = logits.iter().map(|x| x + c).collect();
            // exact shifts can merge near-ties under rounding; only compare
            // when the top two are separated
            let mut sorted = logits.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
            if sorted.len() < 2 || sorted[0] - sorted[1] > 1e-9 {
                prop_assert_eq!(argmax(&logits), argmax(&shifted));
            }
        }

        #[test]
        fn increasing_schedule_is_monotone(start in 0.0f64..1.0, delta in 0.0f64..2.0, total in 1usize..300) {
            let s = NoiseSchedule::new(start, start + delta, total).unwrap();
            let mut prev = s.sigma_for_epoch(0).unwrap();
            for e in 1..total {
                let cur = s.sigma_for_epoch(e).unwrap();
                prop_assert!(cur >= prev);
                prev = cur;
            }
        }
    }
}
