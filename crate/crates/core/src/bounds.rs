//! Best achievable team reward when the asker can only tell images apart up
//! to a partition of the pool, in exact rational arithmetic, with a
//! Monte-Carlo cross-check.

use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BoundError {
    #[error("invalid bound query: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, BoundError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundQuery {
    /// Pool size `P`.
    pub pool: u64,
    /// Number of distinguishable cells `k`.
    pub cells: u64,
    /// Images held by the asker `n`.
    pub held: u64,
}

impl BoundQuery {
    pub fn new(pool: u64, cells: u64, held: u64) -> Result<Self> {
        let q = Self { pool, cells, held };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.held < 2 {
            return Err(BoundError::Invalid(format!("need at least 2 held images, got {}", self.held)));
        }
        if self.pool < self.held {
            return Err(BoundError::Invalid(format!(
                "cannot hold {} distinct images from a pool of {}",
                self.held, self.pool
            )));
        }
        if self.cells == 0 {
            return Err(BoundError::Invalid("need at least one cell".into()));
        }
        Ok(())
    }

    /// Sizes of the balanced partition, largest first: `P mod k` cells of
    /// `⌈P/k⌉`, the rest `⌊P/k⌋` (possibly empty when `k > P`).
    pub fn cell_sizes(&self) -> Vec<u64> {
        let (q, r) = self.pool.div_rem(&self.cells);
        (0..self.cells).map(|i| if i < r { q + 1 } else { q }).collect()
    }
}

/// Every image answers each of `words` yes/no questions, so at most `2^w`
/// answer patterns separate the pool.
pub fn cells_from_vocab(words: u32) -> u64 {
    1u64.checked_shl(words).unwrap_or(u64::MAX)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundResult {
    pub query: BoundQuery,
    pub value: BigRational,
}

impl BoundResult {
    pub fn numer(&self) -> &BigInt {
        self.value.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.value.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::NAN)
    }

    /// Decimal rounded half-up to `digits` places, exactly.
    pub fn decimal(&self, digits: usize) -> String {
        decimal(&self.value, digits)
    }
}

impl fmt::Display for BoundResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

/// Exact decimal rendering of a non-negative rational.
pub fn decimal(v: &BigRational, digits: usize) -> String {
    let scale = num_traits::pow(BigInt::from(10), digits);
    let scaled = v * BigRational::from_integer(scale.clone());
    let rounded = (scaled + BigRational::new(BigInt::one(), BigInt::from(2))).floor().to_integer();
    let (int, frac) = rounded.div_rem(&scale);
    if digits == 0 {
        return int.to_string();
    }
    format!("{int}.{:0>width$}", frac.to_string(), width = digits)
}

fn binom(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `P(j same-cell distractors)` for `j = 0..n-1` when the target sits in a
/// cell of size `c`: hypergeometric over the other `P-1` images.
pub fn distractor_weights(pool: u64, cell: u64, held: u64) -> Vec<BigRational> {
    let total = binom(pool - 1, held - 1);
    (0..held)
        .map(|j| {
            let ways = binom(cell.saturating_sub(1), j) * binom(pool - cell, held - 1 - j);
            BigRational::new(ways, total.clone())
        })
        .collect()
}

fn bound_for_cell(pool: u64, cell: u64, held: u64) -> BigRational {
    distractor_weights(pool, cell, held)
        .into_iter()
        .enumerate()
        .map(|(j, w)| w / BigRational::from_integer(BigInt::from(j as u64 + 1)))
        .fold(BigRational::zero(), |a, b| a + b)
}

/// Expected reward of guessing uniformly among the held images that share
/// the target's cell.
pub fn exact_bound(q: BoundQuery) -> Result<BoundResult> {
    q.validate()?;
    let p = BigRational::from_integer(BigInt::from(q.pool));
    let mut value = BigRational::zero();
    let sizes = q.cell_sizes();
    let mut distinct = sizes.clone();
    distinct.dedup();
    for c in distinct.into_iter().filter(|&c| c > 0) {
        let images_in_such_cells = sizes.iter().filter(|&&s| s == c).count() as u64 * c;
        let weight = BigRational::from_integer(BigInt::from(images_in_such_cells)) / &p;
        value += weight * bound_for_cell(q.pool, c, q.held);
    }
    Ok(BoundResult { query: q, value })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarlo {
    pub mean: f64,
    pub stderr: f64,
    pub trials: u64,
}

/// Simulates the same strategy: image `i` lives in cell `i mod k`; sample
/// `n` held images and a target slot, score `1 / (same-cell held images)`.
pub fn monte_carlo_bound(q: BoundQuery, trials: u64, rng: &mut impl Rng) -> Result<MonteCarlo> {
    q.validate()?;
    if trials == 0 {
        return Err(BoundError::Invalid("need at least one trial".into()));
    }
    let (p, k, n) = (q.pool as usize, q.cells, q.held as usize);
    let (mut sum, mut sum_sq) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let held = index::sample(rng, p, n);
        let target = rng.random_range(0..n);
        let cell = held.index(target) as u64 % k;
        let same = held.iter().filter(|&i| i as u64 % k == cell).count();
        let score = 1.0 / same as f64;
        sum += score;
        sum_sq += score * score;
    }
    let t = trials as f64;
    let mean = sum / t;
    let var = if trials > 1 {
        ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(MonteCarlo {
        mean,
        stderr: (var / t).sqrt(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_xoshiro::SplitMix64;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn appendix_cases() {
        let two = exact_bound(BoundQuery::new(24, 4, 2).unwrap()).unwrap();
        assert_eq!(two.value, r(41, 46));
        assert_eq!(two.value, r(18, 23) + r(5, 23) / r(2, 1));
        assert_eq!(two.decimal(2), "0.89");
        let four = exact_bound(BoundQuery::new(24, 4, 4).unwrap()).unwrap();
        assert_eq!(four.value, r(1261, 1771));
        assert_eq!(four.decimal(2), "0.71");
        assert_eq!(four.decimal(6), "0.712027");
        assert_eq!(four.to_string(), "1261/1771");
    }

    #[test]
    fn vocab_cells() {
        assert_eq!(cells_from_vocab(1), 2);
        assert_eq!(cells_from_vocab(2), 4);
        assert_eq!(cells_from_vocab(4), 16);
    }

    #[test]
    fn degenerate_partitions() {
        for n in 2..6 {
            assert_eq!(exact_bound(BoundQuery::new(24, 1, n).unwrap()).unwrap().value, r(1, n as i64));
            assert_eq!(exact_bound(BoundQuery::new(24, 24, n).unwrap()).unwrap().value, r(1, 1));
            assert_eq!(exact_bound(BoundQuery::new(24, 100, n).unwrap()).unwrap().value, r(1, 1));
        }
    }

    #[test]
    fn balanced_cells() {
        assert_eq!(BoundQuery::new(10, 4, 2).unwrap().cell_sizes(), vec![3, 3, 2, 2]);
        assert_eq!(BoundQuery::new(3, 5, 2).unwrap().cell_sizes(), vec![1, 1, 1, 0, 0]);
        // P=10, k=4: 6 images in cells of 3, 4 in cells of 2.
        // c=3: 1·(7/9) + ½·(2/9) = 8/9; c=2: 1·(8/9) + ½·(1/9) = 17/18.
        let v = exact_bound(BoundQuery::new(10, 4, 2).unwrap()).unwrap().value;
        assert_eq!(v, r(6, 10) * r(8, 9) + r(4, 10) * r(17, 18));
    }

    #[test]
    fn invalid_queries() {
        assert!(BoundQuery::new(24, 4, 1).is_err());
        assert!(BoundQuery::new(3, 4, 4).is_err());
        assert!(BoundQuery::new(24, 0, 2).is_err());
        assert!(monte_carlo_bound(BoundQuery { pool: 24, cells: 4, held: 2 }, 0, &mut SplitMix64::seed_from_u64(0)).is_err());
    }

    #[test]
    fn separable_pool_always_scores_one() {
        let mc = monte_carlo_bound(BoundQuery::new(24, 24, 4).unwrap(), 1000, &mut SplitMix64::seed_from_u64(3)).unwrap();
        assert_eq!((mc.mean, mc.stderr), (1.0, 0.0));
    }

    #[test]
    fn simulation_agrees_with_exact_value() {
        let mut rng = SplitMix64::seed_from_u64(11);
        for (p, k, n) in [(24, 4, 2), (24, 4, 4), (13, 3, 3)] {
            let q = BoundQuery::new(p, k, n).unwrap();
            let exact = exact_bound(q).unwrap().to_f64();
            let mc = monte_carlo_bound(q, 50_000, &mut rng).unwrap();
            assert!((mc.mean - exact).abs() < 3.0 * mc.stderr, "{q:?}: {} vs {exact}", mc.mean);
        }
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(p in 2u64..40, n in 2u64..8, c in 1u64..40) {
            prop_assume!(n <= p && c <= p);
            let total = distractor_weights(p, c, n).into_iter().fold(BigRational::zero(), |a, b| a + b);
            prop_assert_eq!(total, BigRational::one());
        }

        #[test]
        fn bound_is_between_chance_and_one(p in 2u64..40, k in 1u64..50, n in 2u64..8) {
            prop_assume!(n <= p);
            let v = exact_bound(BoundQuery::new(p, k, n).unwrap()).unwrap().value;
            prop_assert!(v >= r(1, n as i64) && v <= BigRational::one());
        }

        #[test]
        fn monotone_in_cells_and_held(p in 2u64..40, k in 1u64..45, n in 2u64..8) {
            prop_assume!(n < p);
            let at = |k, n| exact_bound(BoundQuery::new(p, k, n).unwrap()).unwrap().value;
            prop_assert!(at(k + 1, n) >= at(k, n));
            prop_assert!(at(k, n + 1) <= at(k, n));
        }
    }
}
