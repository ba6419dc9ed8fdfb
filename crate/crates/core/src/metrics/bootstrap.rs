//! Non-parametric percentile bootstrap.
//!
//! Resample `r` draws its indices from a ChaCha stream derived from
//! `(seed, r)`, so intervals do not depend on how resamples are scheduled
//! across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::MetricError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Two-sided confidence level.
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.resamples == 0 {
            return Err(MetricError::InvalidConfig("resamples must be >= 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(MetricError::InvalidConfig(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub low: f64,
    pub high: f64,
    /// Resamples that produced a value.
    pub evaluated: usize,
    /// Resamples skipped because the metric was undefined on them.
    pub degenerate: usize,
}

/// Linear-interpolation percentile of sorted `values`, `p` in `[0, 1]`.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn resample_indices(n: usize, seed: u64, r: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Bootstrap interval of a statistic over `n` items. `metric` receives the
/// indices of one resample (drawn with replacement, size `n`); an `Err`
/// marks that resample degenerate.
pub fn bootstrap_ci_indexed<F>(n: usize, metric: F, cfg: &BootstrapConfig) -> Result<BootstrapInterval, MetricError>
where
    F: Fn(&[usize]) -> Result<f64, MetricError> + Sync,
{
    cfg.validate()?;
    if n == 0 {
        return Err(MetricError::EmptyInput);
    }
    let values: Vec<Option<f64>> = (0..cfg.resamples)
        .into_par_iter()
        .map(|r| metric(&resample_indices(n, cfg.seed, r)).ok())
        .collect();
    let mut values: Vec<f64> = values.into_iter().flatten().collect();
    let degenerate = cfg.resamples - values.len();
    if values.is_empty() {
        return Err(MetricError::AllDegenerate(cfg.resamples));
    }
    if degenerate > 0 {
        log::warn!("{degenerate} of {} bootstrap resamples were degenerate", cfg.resamples);
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - cfg.level) / 2.0;
    Ok(BootstrapInterval {
        low: percentile(&values, tail),
        high: percentile(&values, 1.0 - tail),
        evaluated: values.len(),
        degenerate,
    })
}

/// Bootstrap interval of `metric(scores, labels)`.
pub fn bootstrap_ci<F>(
    metric: F,
    scores: &[f64],
    labels: &[bool],
    cfg: &BootstrapConfig,
) -> Result<BootstrapInterval, MetricError>
where
    F: Fn(&[f64], &[bool]) -> Result<f64, MetricError> + Sync,
{
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    bootstrap_ci_indexed(
        scores.len(),
        |idx| {
            let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            metric(&s, &l)
        },
        cfg,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::auroc;

    fn noisy_scores(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let scores = labels
            .iter()
            .map(|&l| if l { 0.6 } else { 0.4 } + rng.random_range(-0.5..0.5))
            .collect();
        (scores, labels)
    }

    #[test]
    fn percentile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile(&v, 0.0), 1.0);
        assert_eq!(percentile(&v, 1.0), 5.0);
        assert_eq!(percentile(&v, 0.5), 3.0);
        assert!((percentile(&v, 0.1) - 1.4).abs() < 1e-15);
        assert_eq!(percentile(&[7.0], 0.3), 7.0);
    }

    #[test]
    fn constant_metric_gives_degenerate_interval() {
        let (s, l) = noisy_scores(50, 1);
        let ci = bootstrap_ci(|_, _| Ok(0.42), &s, &l, &BootstrapConfig::default()).unwrap();
        assert_eq!((ci.low, ci.high), (0.42, 0.42));
        assert_eq!(ci.evaluated, 1000);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let (s, l) = noisy_scores(120, 2);
        let cfg = BootstrapConfig {
            seed: 9,
            ..Default::default()
        };
        let a = bootstrap_ci(auroc, &s, &l, &cfg).unwrap();
        let b = bootstrap_ci(auroc, &s, &l, &cfg).unwrap();
        assert_eq!(a, b);
        let other = bootstrap_ci(auroc, &s, &l, &BootstrapConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn degenerate_resamples_are_counted() {
        // One positive in 20: ~36% of resamples miss it entirely.
        let scores: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let labels: Vec<bool> = (0..20).map(|i| i == 19).collect();
        let ci = bootstrap_ci(auroc, &scores, &labels, &BootstrapConfig::default()).unwrap();
        assert!(ci.degenerate > 200 && ci.degenerate < 500, "{}", ci.degenerate);
        assert_eq!(ci.evaluated + ci.degenerate, 1000);
        let all_neg = vec![false; 20];
        assert_eq!(
            bootstrap_ci(auroc, &scores, &all_neg, &BootstrapConfig::default()),
            Err(MetricError::AllDegenerate(1000))
        );
    }

    #[test]
    fn interval_narrows_with_sample_size() {
        let width = |n: usize| {
            (0..10)
                .map(|seed| {
                    let (s, l) = noisy_scores(n, 100 + seed);
                    let ci = bootstrap_ci(
                        auroc,
                        &s,
                        &l,
                        &BootstrapConfig {
                            seed,
                            ..Default::default()
                        },
                    )
                    .unwrap();
                    ci.high - ci.low
                })
                .sum::<f64>()
                / 10.0
        };
        let (small, large) = (width(200), width(2000));
        assert!(small > large, "n=200: {small}, n=2000: {large}");
    }

    #[test]
    fn bad_config_and_input() {
        let cfg = BootstrapConfig {
            resamples: 0,
            ..Default::default()
        };
        assert!(bootstrap_ci(auroc, &[1.0], &[true], &cfg).is_err());
        let cfg = BootstrapConfig {
            level: 1.0,
            ..Default::default()
        };
        assert!(bootstrap_ci(auroc, &[1.0], &[true], &cfg).is_err());
        assert_eq!(
            bootstrap_ci(auroc, &[], &[], &BootstrapConfig::default()),
            Err(MetricError::EmptyInput)
        );
    }
}
