use rand::Rng;

use super::{argmax, AgentError, Result};
use crate::tensor::Real;

/// ε-greedy: greedy with probability `1 - ε` (ties to the lowest index),
/// otherwise uniform over all actions. With `ε = 0` no randomness is drawn.
pub fn select_action<T: Real>(q: &[T], epsilon: f64, rng: &mut impl Rng) -> Result<usize> {
    if q.is_empty() {
        return Err(AgentError::EmptyQ);
    }
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(AgentError::BadEpsilon(epsilon));
    }
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..q.len()));
    }
    Ok(argmax(q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_xoshiro::SplitMix64;

    #[test]
    fn greedy_without_exploration() {
        let mut rng = SplitMix64::seed_from_u64(0);
        assert_eq!(select_action(&[0.1f32, 0.9], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&[0.5f32, 0.5], 0.0, &mut rng).unwrap(), 0);
    }

    #[test]
    fn single_action_is_always_chosen() {
        let mut rng = SplitMix64::seed_from_u64(0);
        for eps in [0.0, 0.05, 0.5, 1.0] {
            for _ in 0..100 {
                assert_eq!(select_action(&[3.0f64], eps, &mut rng).unwrap(), 0);
            }
        }
    }

    #[test]
    fn full_exploration_is_uniform() {
        let mut rng = SplitMix64::seed_from_u64(17);
        let draws = 10_000;
        let k = 4;
        let mut counts = vec![0usize; k];
        for _ in 0..draws {
            counts[select_action(&[9.0f64, 0.0, 0.0, 0.0], 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / k as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - p).abs() < 3.0 * se, "{freq}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = SplitMix64::seed_from_u64(0);
        assert!(matches!(select_action::<f32>(&[], 0.0, &mut rng), Err(AgentError::EmptyQ)));
        assert!(select_action(&[1.0f32], 1.5, &mut rng).is_err());
    }
}
