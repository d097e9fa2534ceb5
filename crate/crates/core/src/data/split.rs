use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RatingMatrix;
use crate::error::{Error, Result};

/// Train/validation/test fractions for the target domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.5,
            val_fraction: 0.1,
            test_fraction: 0.4,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        SplitSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let f = [self.train_fraction, self.val_fraction, self.test_fraction];
        if f.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Config(format!("split fractions must be positive, got {f:?}")));
        }
        let sum: f64 = f.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSplit {
    pub train: RatingMatrix,
    pub val: RatingMatrix,
    pub test: RatingMatrix,
}

/// Seeded random partition of the target entries. Each part keeps the
/// original index space and the original relative entry order.
pub fn split_target(target: &RatingMatrix, spec: &SplitSpec) -> Result<TargetSplit> {
    spec.validate()?;
    let n = target.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);

    let n_train = ((n as f64) * spec.train_fraction).round() as usize;
    let n_val = (((n as f64) * spec.val_fraction).round() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);

    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        target.with_entries(idx.into_iter().map(|i| target.entries()[i]).collect())
    };
    Ok(TargetSplit {
        train: take(&order[..n_train]),
        val: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
    })
}
