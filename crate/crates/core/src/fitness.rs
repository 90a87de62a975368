//! Per-seed raw scores and the stability-adjusted fitness tuple.
//!
//! Raw performance is the mean normalized evaluation return on the training
//! instance; raw generalizability averages zero-shot returns over the whole
//! perturbation sweep (per axis, then across axes). Stability enters as a
//! standard-deviation penalty: `mu - kappa * sigma` over the seed scores.

use crate::envs::EnvSet;
use crate::nsga2::FitnessTuple;
use crate::rng::mix;
use crate::tensor::nn::GaussianTanhPolicy;
use crate::trainer::rollout_deterministic;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitnessConfig {
    /// Stability penalization coefficient.
    pub kappa: f64,
    /// Evaluation episodes per environment configuration.
    pub n_eval: usize,
}

impl Default for FitnessConfig {
    fn default() -> Self {
        FitnessConfig {
            kappa: 1.0,
            n_eval: 5,
        }
    }
}

/// Per-seed raw scores for one individual.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub perf: Vec<f64>,
    pub gen: Vec<f64>,
    pub failed: Vec<bool>,
}

impl SeedScores {
    pub fn push_failure(&mut self) {
        self.perf.push(0.0);
        self.gen.push(0.0);
        self.failed.push(true);
    }

    pub fn push(&mut self, perf: f64, gen: f64) {
        self.perf.push(perf);
        self.gen.push(gen);
        self.failed.push(false);
    }

    pub fn seeds(&self) -> usize {
        self.perf.len()
    }
}

/// Evaluation-episode seeds depend only on (seed, episode), not on the
/// config, so a degenerate sweep reproduces the performance score exactly.
fn eval_episodes(
    policy: &GaussianTanhPolicy,
    cfg: &crate::envs::EnvConfig,
    n_eval: usize,
    seed: u64,
) -> f64 {
    let mut total = 0.0;
    for ep in 0..n_eval {
        let episode_seed = mix(seed, &["fitness-eval"], &[ep as u64]);
        total += rollout_deterministic(policy, cfg, episode_seed);
    }
    total / n_eval.max(1) as f64
}

/// Mean normalized return over `n_eval` deterministic episodes on the
/// training instance.
pub fn raw_performance(
    policy: &GaussianTanhPolicy,
    env_set: &EnvSet,
    n_eval: usize,
    seed: u64,
) -> f64 {
    eval_episodes(policy, &env_set.train, n_eval, seed)
}

/// Zero-shot score: mean over each sweep axis of the mean normalized
/// return across that axis's configurations, then averaged across axes.
pub fn raw_generalizability(
    policy: &GaussianTanhPolicy,
    env_set: &EnvSet,
    n_eval: usize,
    seed: u64,
) -> f64 {
    let mut axis_scores = Vec::with_capacity(env_set.sweep.len());
    for axis in &env_set.sweep {
        let mut total = 0.0;
        for cfg in &axis.configs {
            total += eval_episodes(policy, cfg, n_eval, seed);
        }
        axis_scores.push(total / axis.configs.len().max(1) as f64);
    }
    axis_scores.iter().sum::<f64>() / axis_scores.len().max(1) as f64
}

/// Population (not sample) standard deviation.
pub fn population_std(scores: &[f64]) -> f64 {
    let n = scores.len() as f64;
    if scores.is_empty() {
        return 0.0;
    }
    let mean = scores.iter().sum::<f64>() / n;
    (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt()
}

/// `mu - kappa * sigma` over the per-seed scores.
pub fn stability_adjust(scores: &[f64], kappa: f64) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    mean - kappa * population_std(scores)
}

/// Stability-adjusted tuple, floored at zero (normalized scores cannot go
/// below it meaningfully).
pub fn fitness_tuple(scores: &SeedScores, cfg: &FitnessConfig) -> FitnessTuple {
    let perf = stability_adjust(&scores.perf, cfg.kappa).max(0.0);
    let gen = stability_adjust(&scores.gen, cfg.kappa).max(0.0);
    FitnessTuple::perf_gen(perf, gen)
}

/// Instability relative to a reference run (the warm start's sigma).
pub fn instability_ratio(sigma: f64, sigma_ws: f64) -> f64 {
    if sigma_ws == 0.0 {
        if sigma == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        sigma / sigma_ws
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn constant_scores_are_unpenalized() {
        assert_eq!(stability_adjust(&[0.7, 0.7, 0.7], 3.0), 0.7);
    }

    #[test]
    fn two_point_penalty_is_half_gap() {
        // sigma of {0.8, 0.9} is 0.05.
        assert_relative_eq!(stability_adjust(&[0.8, 0.9], 1.0), 0.80, epsilon = 1e-12);
    }

    #[test]
    fn kappa_zero_is_plain_mean() {
        assert_relative_eq!(stability_adjust(&[0.2, 0.6], 0.0), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn published_warm_start_row_is_consistent() {
        // mu = 0.845 with sigma = 0.009 must adjust to 0.836.
        let scores = [0.836, 0.854];
        let mean = scores.iter().sum::<f64>() / 2.0;
        assert_relative_eq!(mean, 0.845, epsilon = 1e-12);
        assert_relative_eq!(population_std(&scores), 0.009, epsilon = 1e-12);
        assert_relative_eq!(stability_adjust(&scores, 1.0), 0.836, epsilon = 1e-12);
    }

    #[test]
    fn all_failed_seeds_give_zero_tuple() {
        let mut scores = SeedScores::default();
        scores.push_failure();
        scores.push_failure();
        let t = fitness_tuple(&scores, &FitnessConfig::default());
        assert_eq!(t.0, vec![0.0, 0.0]);
    }

    #[test]
    fn single_seed_tuple_is_raw_scores() {
        let mut scores = SeedScores::default();
        scores.push(0.62, 0.31);
        let t = fitness_tuple(&scores, &FitnessConfig::default());
        assert_eq!(t.0, vec![0.62, 0.31]);
    }

    #[test]
    fn tuple_is_seed_permutation_invariant() {
        let mut a = SeedScores::default();
        a.push(0.3, 0.5);
        a.push(0.9, 0.2);
        a.push(0.6, 0.8);
        let mut b = SeedScores::default();
        b.push(0.6, 0.8);
        b.push(0.3, 0.5);
        b.push(0.9, 0.2);
        let cfg = FitnessConfig::default();
        assert_eq!(fitness_tuple(&a, &cfg), fitness_tuple(&b, &cfg));
    }

    #[test]
    fn adjustment_never_exceeds_mean() {
        let scores = [0.1, 0.4, 0.9, 0.5];
        let mean = scores.iter().sum::<f64>() / 4.0;
        for kappa in [0.0, 0.5, 1.0, 2.0] {
            let adj = stability_adjust(&scores, kappa);
            assert!(adj <= mean + 1e-15);
            if kappa == 0.0 {
                assert_relative_eq!(adj, mean, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn raising_one_seed_never_lowers_the_mean() {
        let base = [0.2, 0.4, 0.6];
        let raised = [0.2, 0.7, 0.6];
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        assert!(mean(&raised) >= mean(&base));
    }

    #[test]
    fn instability_of_self_is_one() {
        assert_eq!(instability_ratio(0.4, 0.4), 1.0);
        assert_eq!(instability_ratio(0.0, 0.0), 1.0);
    }
}
