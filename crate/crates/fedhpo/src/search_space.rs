//! Hyperparameter domain: configuration tuples and the search space they
//! are drawn from, with prior sampling and membership checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::SeededRng;

/// Optimizer choice tuned by the search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OptimizerKind::Adam => write!(f, "adam"),
            OptimizerKind::Sgd => write!(f, "sgd"),
        }
    }
}

/// One hyperparameter configuration: learning rate, optimizer, batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
}

impl Configuration {
    pub fn new(learning_rate: f64, optimizer: OptimizerKind, batch_size: usize) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidConfiguration(format!(
                "learning rate must be positive and finite, got {learning_rate}"
            )));
        }
        if batch_size < 1 {
            return Err(Error::InvalidConfiguration(
                "batch size must be at least 1".into(),
            ));
        }
        Ok(Self {
            learning_rate,
            optimizer,
            batch_size,
        })
    }
}

/// The search domain: a learning-rate interval sampled log-uniformly plus
/// categorical candidate sets for batch size and optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    lr_low: f64,
    lr_high: f64,
    batch_candidates: Vec<usize>,
    optimizer_candidates: Vec<OptimizerKind>,
}

impl SearchSpace {
    pub fn new(
        lr_low: f64,
        lr_high: f64,
        batch_candidates: Vec<usize>,
        optimizer_candidates: Vec<OptimizerKind>,
    ) -> Result<Self> {
        if !(lr_low > 0.0 && lr_low.is_finite() && lr_high.is_finite()) {
            return Err(Error::InvalidSearchSpace(
                "learning-rate bounds must be positive and finite".into(),
            ));
        }
        if lr_low > lr_high {
            return Err(Error::InvalidSearchSpace(format!(
                "lr_low ({lr_low}) must not exceed lr_high ({lr_high})"
            )));
        }
        if batch_candidates.is_empty() || optimizer_candidates.is_empty() {
            return Err(Error::InvalidSearchSpace(
                "candidate sets must be non-empty".into(),
            ));
        }
        if has_duplicates(&batch_candidates) || has_duplicates(&optimizer_candidates) {
            return Err(Error::InvalidSearchSpace(
                "candidate sets must be duplicate-free".into(),
            ));
        }
        if batch_candidates.iter().any(|&b| b < 1) {
            return Err(Error::InvalidSearchSpace(
                "batch candidates must be positive".into(),
            ));
        }
        Ok(Self {
            lr_low,
            lr_high,
            batch_candidates,
            optimizer_candidates,
        })
    }

    pub fn lr_low(&self) -> f64 {
        self.lr_low
    }

    pub fn lr_high(&self) -> f64 {
        self.lr_high
    }

    pub fn batch_candidates(&self) -> &[usize] {
        &self.batch_candidates
    }

    pub fn optimizer_candidates(&self) -> &[OptimizerKind] {
        &self.optimizer_candidates
    }

    /// Draws a configuration from the prior: log-uniform learning rate,
    /// uniform categorical batch size and optimizer.
    pub fn sample_prior(&self, rng: &mut SeededRng) -> Configuration {
        let u: f64 = rng.random();
        let lr = (u * (self.lr_high.ln() - self.lr_low.ln()) + self.lr_low.ln())
            .exp()
            .clamp(self.lr_low, self.lr_high);
        let batch = self.batch_candidates[rng.random_range(0..self.batch_candidates.len())];
        let opt = self.optimizer_candidates[rng.random_range(0..self.optimizer_candidates.len())];
        Configuration {
            learning_rate: lr,
            optimizer: opt,
            batch_size: batch,
        }
    }

    /// True iff the configuration lies inside this space.
    pub fn validate(&self, config: &Configuration) -> bool {
        config.learning_rate >= self.lr_low
            && config.learning_rate <= self.lr_high
            && self.batch_candidates.contains(&config.batch_size)
            && self.optimizer_candidates.contains(&config.optimizer)
    }
}

impl Default for SearchSpace {
    /// lr in [1e-5, 1e-3] log-uniform, batch in {16, 32, 64}, Adam or SGD.
    fn default() -> Self {
        Self::new(
            1e-5,
            1e-3,
            vec![16, 32, 64],
            vec![OptimizerKind::Adam, OptimizerKind::Sgd],
        )
        .expect("default space is valid")
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, a)| items[..i].contains(a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SeededRng {
        SeededRng::seed_from_u64(seed)
    }

    #[test]
    fn degenerate_space_always_returns_single_point() {
        let space =
            SearchSpace::new(1e-4, 1e-4, vec![32], vec![OptimizerKind::Adam]).unwrap();
        let mut r = rng(7);
        for _ in 0..20 {
            let c = space.sample_prior(&mut r);
            assert_eq!(c.learning_rate, 1e-4);
            assert_eq!(c.batch_size, 32);
            assert_eq!(c.optimizer, OptimizerKind::Adam);
        }
    }

    #[test]
    fn prior_samples_stay_in_bounds() {
        let space = SearchSpace::default();
        let mut r = rng(3);
        for _ in 0..1000 {
            let c = space.sample_prior(&mut r);
            assert!(c.learning_rate >= 1e-5 && c.learning_rate <= 1e-3);
            assert!([16, 32, 64].contains(&c.batch_size));
        }
    }

    #[test]
    fn log_lr_is_uniform_by_ks_statistic() {
        // Empirical CDF of log10(lr) against the uniform CDF on [-5, -3].
        let space = SearchSpace::default();
        let mut r = rng(11);
        let n = 10_000;
        let mut xs: Vec<f64> = (0..n)
            .map(|_| space.sample_prior(&mut r).learning_rate.log10())
            .collect();
        xs.sort_by(f64::total_cmp);
        let mut d: f64 = 0.0;
        for (i, x) in xs.iter().enumerate() {
            let cdf = (x + 5.0) / 2.0;
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            d = d.max((cdf - lo).abs()).max((cdf - hi).abs());
        }
        assert!(d < 0.02, "KS statistic {d} too large");
    }

    #[test]
    fn validate_accepts_interior_rejects_exterior() {
        let space = SearchSpace::default();
        let ok = Configuration::new(1e-4, OptimizerKind::Adam, 32).unwrap();
        assert!(space.validate(&ok));
        let lr_high = Configuration::new(1e-2, OptimizerKind::Adam, 32).unwrap();
        assert!(!space.validate(&lr_high));
        let bad_batch = Configuration::new(1e-4, OptimizerKind::Adam, 48).unwrap();
        assert!(!space.validate(&bad_batch));
    }

    #[test]
    fn same_seed_same_samples() {
        let space = SearchSpace::default();
        let a: Vec<_> = {
            let mut r = rng(42);
            (0..50).map(|_| space.sample_prior(&mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = rng(42);
            (0..50).map(|_| space.sample_prior(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_invalid_spaces() {
        assert!(SearchSpace::new(0.0, 1e-3, vec![16], vec![OptimizerKind::Adam]).is_err());
        assert!(SearchSpace::new(1e-3, 1e-5, vec![16], vec![OptimizerKind::Adam]).is_err());
        assert!(SearchSpace::new(1e-5, 1e-3, vec![], vec![OptimizerKind::Adam]).is_err());
        assert!(SearchSpace::new(
            1e-5,
            1e-3,
            vec![16, 16],
            vec![OptimizerKind::Adam]
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn sampled_configs_always_validate(seed in any::<u64>()) {
            let space = SearchSpace::default();
            let mut r = rng(seed);
            let c = space.sample_prior(&mut r);
            prop_assert!(space.validate(&c));
        }
    }
}
