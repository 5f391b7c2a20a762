use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_inputs, roc, threshold::Confusion, StatsError};

/// Redraws allowed per replicate when a resample loses a required class.
pub const MAX_REDRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl BootstrapConfig {
    pub fn new(seed: u64) -> Self {
        BootstrapConfig { replicates: 1000, level: 0.95, seed }
    }

    pub fn with_level(mut self, level: f64) -> Self {
        self.level = level;
        self
    }

    pub fn with_replicates(mut self, replicates: usize) -> Self {
        self.replicates = replicates;
        self
    }
}

/// Named statistic over `(scores, labels)`; thresholded ones use `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum Metric {
    Auc,
    AveragePrecision,
    Accuracy { threshold: f64 },
    Sensitivity { threshold: f64 },
    Specificity { threshold: f64 },
}

impl Metric {
    pub fn evaluate(&self, scores: &[f64], labels: &[bool]) -> Result<f64, StatsError> {
        match *self {
            Metric::Auc => roc::auc(scores, labels),
            Metric::AveragePrecision => Ok(roc::pr_curve(scores, labels)?.average_precision),
            Metric::Accuracy { threshold } => Ok(Confusion::new(scores, labels, threshold)?.accuracy()),
            Metric::Sensitivity { threshold } => Confusion::new(scores, labels, threshold)?.sensitivity(),
            Metric::Specificity { threshold } => Confusion::new(scores, labels, threshold)?.specificity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CiMethod {
    #[serde(rename = "percentile-bootstrap")]
    PercentileBootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: CiMethod,
    pub replicates: usize,
}

fn needs_redraw(e: &StatsError) -> bool {
    matches!(e, StatsError::SingleClass { .. } | StatsError::NoPositives)
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicate values of `stat` on case resamples; replicate `i` draws from stream `i` of the seed.
pub fn bootstrap_replicates<F>(n: usize, config: &BootstrapConfig, stat: F) -> Result<Vec<f64>, StatsError>
where
    F: Fn(&[usize]) -> Result<f64, StatsError> + Sync,
{
    if n == 0 {
        return Err(StatsError::Empty);
    }
    if config.replicates == 0 {
        return Err(StatsError::Invalid("replicates must be at least 1".into()));
    }
    (0..config.replicates)
        .into_par_iter()
        .map(|replicate| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(replicate as u64);
            let mut idx = vec![0usize; n];
            for redraw in 0..=MAX_REDRAWS {
                for slot in idx.iter_mut() {
                    *slot = rng.random_range(0..n);
                }
                match stat(&idx) {
                    Ok(v) => return Ok(v),
                    Err(e) if needs_redraw(&e) => {
                        if redraw == MAX_REDRAWS {
                            return Err(StatsError::DegenerateData { replicate, redraws: MAX_REDRAWS });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
            unreachable!()
        })
        .collect()
}

/// Percentile interval from replicate values.
pub fn percentile_interval(mut values: Vec<f64>, level: f64) -> Result<ConfidenceInterval, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel(level));
    }
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(ConfidenceInterval {
        lower: quantile_sorted(&values, tail),
        upper: quantile_sorted(&values, 1.0 - tail),
        level,
        method: CiMethod::PercentileBootstrap,
        replicates: values.len(),
    })
}

/// Percentile bootstrap CI of an arbitrary statistic of resampled case indices.
pub fn bootstrap_ci_with<F>(n: usize, config: &BootstrapConfig, stat: F) -> Result<ConfidenceInterval, StatsError>
where
    F: Fn(&[usize]) -> Result<f64, StatsError> + Sync,
{
    if !(config.level > 0.0 && config.level < 1.0) {
        return Err(StatsError::BadLevel(config.level));
    }
    percentile_interval(bootstrap_replicates(n, config, stat)?, config.level)
}

/// Percentile bootstrap CI of `metric`, resampling cases with replacement.
pub fn bootstrap_ci(
    metric: Metric,
    scores: &[f64],
    labels: &[bool],
    config: &BootstrapConfig,
) -> Result<ConfidenceInterval, StatsError> {
    check_inputs(scores, labels)?;
    bootstrap_ci_with(scores.len(), config, |idx| {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        metric.evaluate(&s, &l)
    })
}
