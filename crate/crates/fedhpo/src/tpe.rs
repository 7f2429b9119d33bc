//! Tree-structured Parzen Estimator: models densities over good and bad
//! observations and proposes candidates maximizing their ratio.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::search_space::{Configuration, SearchSpace};
use crate::SeededRng;

/// One completed evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trial {
    pub config: Configuration,
    /// Validation loss; lower is better. +inf marks a failed evaluation.
    pub objective: f64,
    pub val_f1: f64,
}

/// Outcome of a full optimization run.
#[derive(Debug, Clone)]
pub struct HpoResult {
    pub best: Trial,
    pub history: Vec<Trial>,
}

/// Knobs of the optimizer loop.
#[derive(Debug, Clone, Copy)]
pub struct TpeSettings {
    /// Quantile of observations treated as "good".
    pub gamma: f64,
    /// Trials drawn from the prior before the model kicks in.
    pub n_startup: usize,
    /// Candidates scored per suggestion.
    pub n_candidates: usize,
}

impl Default for TpeSettings {
    fn default() -> Self {
        Self {
            gamma: 0.25,
            n_startup: 10,
            n_candidates: 24,
        }
    }
}

/// Splits history into the ceil(gamma * n) lowest-objective trials (at
/// least one) and the remainder. Ties break toward the earlier trial.
pub fn split_observations(history: &[Trial], gamma: f64) -> Result<(Vec<Trial>, Vec<Trial>)> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let n = history.len();
    let n_good = ((gamma * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| history[a].objective.total_cmp(&history[b].objective).then(a.cmp(&b)));
    let mut good_idx: Vec<usize> = order[..n_good].to_vec();
    let mut bad_idx: Vec<usize> = order[n_good..].to_vec();
    good_idx.sort_unstable();
    bad_idx.sort_unstable();
    Ok((
        good_idx.iter().map(|&i| history[i]).collect(),
        bad_idx.iter().map(|&i| history[i]).collect(),
    ))
}

/// Parzen mixture over a bounded interval: one truncated-Gaussian kernel
/// per observation plus a uniform prior component, equally weighted.
#[derive(Debug, Clone)]
pub struct ContinuousDensity {
    lo: f64,
    hi: f64,
    /// (center, bandwidth) pairs.
    kernels: Vec<(f64, f64)>,
}

impl ContinuousDensity {
    pub fn fit(values: &[f64], lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "invalid bounds");
        let range = hi - lo;
        if range <= 0.0 {
            return Self {
                lo,
                hi,
                kernels: Vec::new(),
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let min_bw = 0.01 * range;
        let kernels = sorted
            .iter()
            .enumerate()
            .map(|(i, &mu)| {
                let left = if i == 0 { mu - lo } else { mu - sorted[i - 1] };
                let right = if i + 1 == sorted.len() {
                    hi - mu
                } else {
                    sorted[i + 1] - mu
                };
                (mu, left.max(right).max(min_bw))
            })
            .collect();
        Self { lo, hi, kernels }
    }

    /// Mixture density at `query`; integrates to 1 over [lo, hi].
    pub fn density(&self, query: f64) -> f64 {
        let range = self.hi - self.lo;
        if range <= 0.0 {
            return 1.0;
        }
        let std = Normal::standard();
        let n = self.kernels.len();
        let weight = 1.0 / (n as f64 + 1.0);
        let mut total = weight / range; // uniform prior component
        for &(mu, bw) in &self.kernels {
            let z = (query - mu) / bw;
            let norm = std.cdf((self.hi - mu) / bw) - std.cdf((self.lo - mu) / bw);
            let pdf = (-0.5 * z * z).exp() / (bw * (2.0 * std::f64::consts::PI).sqrt());
            total += weight * pdf / norm;
        }
        total
    }

    /// Draws from the mixture by component choice plus inverse-CDF
    /// sampling of the truncated kernel.
    pub fn sample(&self, rng: &mut SeededRng) -> f64 {
        let range = self.hi - self.lo;
        if range <= 0.0 {
            return self.lo;
        }
        let comp = rng.random_range(0..=self.kernels.len());
        if comp == self.kernels.len() {
            return self.lo + rng.random::<f64>() * range;
        }
        let (mu, bw) = self.kernels[comp];
        let std = Normal::standard();
        let c_lo = std.cdf((self.lo - mu) / bw);
        let c_hi = std.cdf((self.hi - mu) / bw);
        let u = c_lo + rng.random::<f64>() * (c_hi - c_lo);
        (mu + bw * std.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))).clamp(self.lo, self.hi)
    }
}

/// Convenience wrapper matching the per-operation contract: density of the
/// Parzen mixture over `values` (already in log coordinates) at `query`.
pub fn density_continuous(values: &[f64], query: f64, bounds: (f64, f64)) -> f64 {
    ContinuousDensity::fit(values, bounds.0, bounds.1).density(query)
}

/// Laplace-smoothed categorical frequency over an ordered candidate set.
#[derive(Debug, Clone)]
pub struct CategoricalDensity {
    probs: Vec<f64>,
}

impl CategoricalDensity {
    /// `counts[i]` is the number of observations of candidate i.
    pub fn fit(counts: &[usize]) -> Self {
        let n: usize = counts.iter().sum();
        let k = counts.len();
        let probs = counts
            .iter()
            .map(|&c| (c as f64 + 1.0) / (n as f64 + k as f64))
            .collect();
        Self { probs }
    }

    pub fn prob(&self, index: usize) -> f64 {
        self.probs[index]
    }

    pub fn sample(&self, rng: &mut SeededRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        self.probs.len() - 1
    }
}

/// Smoothed frequency (count(query) + 1) / (|values| + |candidates|).
pub fn density_categorical<T: PartialEq>(values: &[T], candidates: &[T], query: &T) -> Result<f64> {
    let idx = candidates
        .iter()
        .position(|c| c == query)
        .ok_or(Error::UnknownCategory)?;
    let counts: Vec<usize> = candidates
        .iter()
        .map(|c| values.iter().filter(|v| *v == c).count())
        .collect();
    Ok(CategoricalDensity::fit(&counts).prob(idx))
}

fn categorical_counts<T: PartialEq>(values: &[T], candidates: &[T]) -> Vec<usize> {
    candidates
        .iter()
        .map(|c| values.iter().filter(|v| *v == c).count())
        .collect()
}

/// Proposes the next configuration. During startup (or with too few finite
/// observations) this is a prior draw; otherwise candidates are sampled
/// from the good density and ranked by the likelihood ratio l/g across the
/// three dimensions.
pub fn suggest(
    history: &[Trial],
    space: &SearchSpace,
    settings: &TpeSettings,
    rng: &mut SeededRng,
) -> Configuration {
    if history.len() < settings.n_startup {
        return space.sample_prior(rng);
    }
    let finite: Vec<Trial> = history
        .iter()
        .copied()
        .filter(|t| t.objective.is_finite())
        .collect();
    if finite.len() < 2 {
        return space.sample_prior(rng);
    }
    let (good, bad) = split_observations(&finite, settings.gamma).expect("finite is non-empty");
    if bad.is_empty() {
        return space.sample_prior(rng);
    }

    let lo = space.lr_low().log10();
    let hi = space.lr_high().log10();
    let log_lr = |ts: &[Trial]| -> Vec<f64> {
        ts.iter().map(|t| t.config.learning_rate.log10()).collect()
    };
    let l_lr = ContinuousDensity::fit(&log_lr(&good), lo, hi);
    let g_lr = ContinuousDensity::fit(&log_lr(&bad), lo, hi);

    let batches: Vec<usize> = good.iter().map(|t| t.config.batch_size).collect();
    let batches_bad: Vec<usize> = bad.iter().map(|t| t.config.batch_size).collect();
    let l_batch = CategoricalDensity::fit(&categorical_counts(&batches, space.batch_candidates()));
    let g_batch =
        CategoricalDensity::fit(&categorical_counts(&batches_bad, space.batch_candidates()));

    let opts: Vec<_> = good.iter().map(|t| t.config.optimizer).collect();
    let opts_bad: Vec<_> = bad.iter().map(|t| t.config.optimizer).collect();
    let l_opt = CategoricalDensity::fit(&categorical_counts(&opts, space.optimizer_candidates()));
    let g_opt =
        CategoricalDensity::fit(&categorical_counts(&opts_bad, space.optimizer_candidates()));

    let mut best: Option<(f64, Configuration)> = None;
    for _ in 0..settings.n_candidates.max(1) {
        let x = l_lr.sample(rng);
        let b = l_batch.sample(rng);
        let o = l_opt.sample(rng);
        let score = l_lr.density(x) / g_lr.density(x)
            * (l_batch.prob(b) / g_batch.prob(b))
            * (l_opt.prob(o) / g_opt.prob(o));
        let config = Configuration {
            learning_rate: 10f64.powf(x).clamp(space.lr_low(), space.lr_high()),
            optimizer: space.optimizer_candidates()[o],
            batch_size: space.batch_candidates()[b],
        };
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, config));
        }
    }
    let config = best.expect("n_candidates >= 1").1;
    debug_assert!(space.validate(&config));
    config
}

/// Runs the sequential optimization loop for exactly `budget` evaluations.
/// Non-finite losses are recorded as +inf trials and the run continues.
pub fn run_hpo<F>(
    mut objective: F,
    space: &SearchSpace,
    budget: usize,
    settings: &TpeSettings,
    rng: &mut SeededRng,
) -> Result<HpoResult>
where
    F: FnMut(&Configuration) -> (f64, f64),
{
    if budget == 0 {
        return Err(Error::EmptyHistory);
    }
    let mut history: Vec<Trial> = Vec::with_capacity(budget);
    for _ in 0..budget {
        let config = suggest(&history, space, settings, rng);
        let (loss, f1) = objective(&config);
        let objective_value = if loss.is_finite() { loss } else { f64::INFINITY };
        history.push(Trial {
            config,
            objective: objective_value,
            val_f1: if f1.is_finite() { f1 } else { 0.0 },
        });
    }
    let best_idx = (0..history.len())
        .min_by(|&a, &b| {
            history[a]
                .objective
                .total_cmp(&history[b].objective)
                .then(a.cmp(&b))
        })
        .expect("budget >= 1");
    Ok(HpoResult {
        best: history[best_idx],
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search_space::OptimizerKind;
    use rand::SeedableRng;

    fn rng(seed: u64) -> SeededRng {
        SeededRng::seed_from_u64(seed)
    }

    fn trial(lr: f64, objective: f64) -> Trial {
        Trial {
            config: Configuration {
                learning_rate: lr,
                optimizer: OptimizerKind::Adam,
                batch_size: 32,
            },
            objective,
            val_f1: 0.5,
        }
    }

    #[test]
    fn split_selects_single_best() {
        let history: Vec<Trial> = [0.5, 0.1, 0.9, 0.3].iter().map(|&o| trial(1e-4, o)).collect();
        let (good, bad) = split_observations(&history, 0.25).unwrap();
        assert_eq!(good.len(), 1);
        assert_eq!(good[0].objective, 0.1);
        assert_eq!(bad.len(), 3);
    }

    #[test]
    fn split_minimum_one_rule() {
        let history = vec![trial(1e-4, 0.7)];
        let (good, bad) = split_observations(&history, 0.25).unwrap();
        assert_eq!(good.len(), 1);
        assert!(bad.is_empty());
    }

    #[test]
    fn split_matches_sort_oracle() {
        let mut r = rng(1);
        let history: Vec<Trial> = (0..20)
            .map(|_| trial(1e-4, rand::Rng::random::<f64>(&mut r)))
            .collect();
        let (good, bad) = split_observations(&history, 0.25).unwrap();
        assert_eq!(good.len(), 5);
        let max_good = good.iter().map(|t| t.objective).fold(f64::MIN, f64::max);
        let min_bad = bad.iter().map(|t| t.objective).fold(f64::MAX, f64::min);
        assert!(max_good <= min_bad);
        // Brute-force oracle: sorted objectives, lowest 5 are the good set.
        let mut sorted: Vec<f64> = history.iter().map(|t| t.objective).collect();
        sorted.sort_by(f64::total_cmp);
        let mut good_objs: Vec<f64> = good.iter().map(|t| t.objective).collect();
        good_objs.sort_by(f64::total_cmp);
        assert_eq!(good_objs, sorted[..5].to_vec());
    }

    #[test]
    fn split_rejects_empty_history() {
        assert!(matches!(
            split_observations(&[], 0.25),
            Err(Error::EmptyHistory)
        ));
    }

    #[test]
    fn empty_observations_give_uniform_density() {
        let d = ContinuousDensity::fit(&[], -5.0, -3.0);
        for q in [-5.0, -4.5, -4.0, -3.2] {
            assert!((d.density(q) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_midpoint_observation_peaks_at_center() {
        let d = ContinuousDensity::fit(&[-4.0], -5.0, -3.0);
        assert!(d.density(-4.0) > d.density(-5.0));
        assert!(d.density(-4.0) > d.density(-3.0));
    }

    #[test]
    fn continuous_density_integrates_to_one() {
        let mut r = rng(2);
        let values: Vec<f64> = (0..100)
            .map(|_| rand::Rng::random_range(&mut r, -5.0..-3.0))
            .collect();
        let d = ContinuousDensity::fit(&values, -5.0, -3.0);
        let n = 10_000;
        let h = 2.0 / n as f64;
        let mut integral = 0.0;
        for i in 0..=n {
            let x = -5.0 + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            integral += w * d.density(x) * h;
        }
        assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
    }

    #[test]
    fn categorical_prior_is_uniform() {
        let values: Vec<OptimizerKind> = vec![];
        let candidates = [OptimizerKind::Adam, OptimizerKind::Sgd];
        let p = density_categorical(&values, &candidates, &OptimizerKind::Adam).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn categorical_smoothed_counts() {
        let values = [OptimizerKind::Adam, OptimizerKind::Adam, OptimizerKind::Sgd];
        let candidates = [OptimizerKind::Adam, OptimizerKind::Sgd];
        let p = density_categorical(&values, &candidates, &OptimizerKind::Adam).unwrap();
        assert!((p - 3.0 / 5.0).abs() < 1e-15);
    }

    #[test]
    fn categorical_probs_sum_to_one() {
        for counts in [vec![0, 0], vec![3, 1], vec![5, 0, 2, 7]] {
            let d = CategoricalDensity::fit(&counts);
            let sum: f64 = (0..counts.len()).map(|i| d.prob(i)).sum();
            assert!((sum - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn categorical_unknown_query_is_error() {
        let candidates = [16usize, 32];
        assert!(matches!(
            density_categorical(&[16usize], &candidates, &48),
            Err(Error::UnknownCategory)
        ));
    }

    #[test]
    fn suggest_prefers_good_lr_cluster() {
        let mut history = Vec::new();
        for i in 0..20 {
            history.push(trial(1e-4, 0.01 + i as f64 * 1e-4));
            history.push(trial(9e-4, 1.0 + i as f64 * 1e-4));
        }
        let space = SearchSpace::default();
        let settings = TpeSettings::default();
        let mut near_good = 0;
        for seed in 0..100 {
            let mut r = rng(seed);
            let c = suggest(&history, &space, &settings, &mut r);
            let x = c.learning_rate.log10();
            if (x - (-4.0)).abs() < (x - 9e-4f64.log10()).abs() {
                near_good += 1;
            }
        }
        assert!(near_good >= 95, "only {near_good}/100 near the good cluster");
    }

    #[test]
    fn suggest_prefers_good_optimizer() {
        let mut history = Vec::new();
        for i in 0..20 {
            let mut good = trial(1e-4, 0.01 + i as f64 * 1e-4);
            good.config.optimizer = OptimizerKind::Adam;
            history.push(good);
            let mut bad = trial(1e-4, 1.0 + i as f64 * 1e-4);
            bad.config.optimizer = OptimizerKind::Sgd;
            history.push(bad);
        }
        let space = SearchSpace::default();
        let settings = TpeSettings::default();
        let mut adam = 0;
        for seed in 0..100 {
            let mut r = rng(10_000 + seed);
            if suggest(&history, &space, &settings, &mut r).optimizer == OptimizerKind::Adam {
                adam += 1;
            }
        }
        assert!(adam >= 90, "only {adam}/100 chose adam");
    }

    #[test]
    fn suggestions_always_validate() {
        let space = SearchSpace::default();
        let settings = TpeSettings::default();
        let mut r = rng(33);
        let mut history = Vec::new();
        for i in 0..40 {
            let c = suggest(&history, &space, &settings, &mut r);
            assert!(space.validate(&c));
            history.push(Trial {
                config: c,
                objective: (c.learning_rate.log10() + 4.0).powi(2),
                val_f1: 0.5,
            });
            if i == 15 {
                // A failed trial must not derail the model.
                history.push(trial(5e-4, f64::INFINITY));
            }
        }
    }

    #[test]
    fn run_hpo_budget_one() {
        let space = SearchSpace::default();
        let res = run_hpo(
            |_| (0.42, 0.9),
            &space,
            1,
            &TpeSettings::default(),
            &mut rng(4),
        )
        .unwrap();
        assert_eq!(res.history.len(), 1);
        assert_eq!(res.best.objective, 0.42);
    }

    #[test]
    fn run_hpo_is_deterministic() {
        let space = SearchSpace::default();
        let obj = |c: &Configuration| ((c.learning_rate.log10() + 4.0).powi(2), 0.5);
        let a = run_hpo(obj, &space, 25, &TpeSettings::default(), &mut rng(5)).unwrap();
        let b = run_hpo(obj, &space, 25, &TpeSettings::default(), &mut rng(5)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
    }

    #[test]
    fn run_hpo_demotes_non_finite_losses() {
        let space = SearchSpace::default();
        let mut calls = 0;
        let res = run_hpo(
            |_| {
                calls += 1;
                if calls % 3 == 0 {
                    (f64::NAN, 0.1)
                } else {
                    (calls as f64, 0.5)
                }
            },
            &space,
            12,
            &TpeSettings::default(),
            &mut rng(6),
        )
        .unwrap();
        assert_eq!(res.history.len(), 12);
        assert!(res
            .history
            .iter()
            .filter(|t| t.objective.is_infinite())
            .count() == 4);
        assert_eq!(res.best.objective, 1.0);
    }

    #[test]
    fn quadratic_objective_recovers_analytic_minimum() {
        // Minimum at lr = 1e-4; count seeds whose best lr lands within
        // [10^-4.3, 10^-3.7] after 30 trials.
        let space = SearchSpace::default();
        let settings = TpeSettings::default();
        let mut hits = 0;
        for seed in 0..100u64 {
            let res = run_hpo(
                |c: &Configuration| ((c.learning_rate.log10() + 4.0).powi(2), 0.5),
                &space,
                30,
                &settings,
                &mut rng(500 + seed),
            )
            .unwrap();
            let x = res.best.config.learning_rate.log10();
            if (-4.3..=-3.7).contains(&x) {
                hits += 1;
            }
        }
        assert!(hits >= 80, "only {hits}/100 seeds inside the window");
    }
}
