//! Multi-label evaluation: AUROC, F1, MCC, bootstrap intervals and
//! image-text alignment.

mod alignment;
mod bootstrap;
mod report;

use thiserror::Error;

pub use alignment::{alignment, Alignment};
pub use bootstrap::{bootstrap_ci, bootstrap_ci_indexed, percentile, BootstrapConfig, BootstrapInterval};
pub use report::{evaluate, EvalOptions, EvalReport, LabelMetrics, MacroMetrics};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("labels contain a single class")]
    SingleClass,
    #[error("no label has both classes")]
    NoAdmittedLabels,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("non-finite score at index {0}")]
    NonFiniteScore(usize),
    #[error("input is empty")]
    EmptyInput,
    #[error("all {0} bootstrap resamples were degenerate")]
    AllDegenerate(usize),
    #[error("invalid bootstrap config: {0}")]
    InvalidConfig(String),
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFiniteScore(i));
    }
    Ok(())
}

/// Mann-Whitney AUROC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counted as one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the rank sum of positives, kept integral so the result is exact.
    let mut twice_rank_sum: u64 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1..=end share the average (start + 1 + end) / 2.
        let twice_avg_rank = (start + 1 + end) as u64;
        let positives = order[start..end].iter().filter(|&&i| labels[i]).count() as u64;
        twice_rank_sum += positives * twice_avg_rank;
        start = end;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// AUROC of every label, `None` where the label has a single class.
pub fn per_label_auroc(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<Vec<Option<f64>>, MetricError> {
    if scores.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: truth.len(),
        });
    }
    scores
        .iter()
        .zip(truth)
        .map(|(s, t)| match auroc(s, t) {
            Ok(v) => Ok(Some(v)),
            Err(MetricError::SingleClass) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

/// Unweighted mean of per-label AUROC over labels with both classes.
/// `scores[k]` and `truth[k]` hold label `k` across all studies.
pub fn macro_auroc(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<f64, MetricError> {
    let per_label = per_label_auroc(scores, truth)?;
    let skipped = per_label.iter().filter(|a| a.is_none()).count();
    if skipped > 0 {
        log::warn!("{skipped} single-class label(s) skipped from macro AUROC");
    }
    mean_admitted(&per_label).ok_or(MetricError::NoAdmittedLabels)
}

fn mean_admitted(values: &[Option<f64>]) -> Option<f64> {
    let admitted: Vec<f64> = values.iter().flatten().copied().collect();
    if admitted.is_empty() {
        None
    } else {
        Some(admitted.iter().sum::<f64>() / admitted.len() as f64)
    }
}

/// Binary confusion counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    /// Predictions are positive where `score >= threshold`.
    pub fn at_threshold(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= threshold, l) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// Matthews correlation; zero when any marginal is empty.
    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fn_ as f64);
        let factors = [tp + fp, tp + fn_, tn + fp, tn + fn_];
        if factors.contains(&0.0) {
            return 0.0;
        }
        let denom = factors.iter().product::<f64>().sqrt();
        ((tp * tn - fp * fn_) / denom).clamp(-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct F1Mcc {
    pub f1: f64,
    pub mcc: f64,
    /// True when the labels hold a single class, so `mcc` is the zero convention.
    pub mcc_degenerate: bool,
}

pub fn f1_and_mcc(scores: &[f64], labels: &[bool], threshold: f64) -> Result<F1Mcc, MetricError> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let c = Confusion::at_threshold(scores, labels, threshold);
    let single_class = c.tp + c.fn_ == 0 || c.tn + c.fp == 0;
    Ok(F1Mcc {
        f1: c.f1(),
        mcc: if single_class { 0.0 } else { c.mcc() },
        mcc_degenerate: single_class,
    })
}
