use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{auroc, bootstrap_ci, bootstrap_ci_indexed, f1_and_mcc, Alignment, BootstrapConfig, MetricError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Probability at or above which a label is predicted present.
    pub threshold: f64,
    #[serde(default)]
    pub bootstrap: Option<BootstrapConfig>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            bootstrap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    /// `None` when the label has a single class in the evaluated split.
    pub auroc: Option<f64>,
    pub f1: f64,
    pub mcc: f64,
    pub positives: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auroc_ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub auroc: f64,
    pub f1: f64,
    pub mcc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub n_studies: usize,
    pub threshold: f64,
    pub per_label: BTreeMap<String, LabelMetrics>,
    #[serde(rename = "macro")]
    pub macro_metrics: MacroMetrics,
    /// Labels left out of the macro averages for having a single class.
    pub skipped_labels: Vec<String>,
    /// Percentile intervals keyed by `macro_auroc`, `macro_f1`, `macro_mcc`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci: Option<BTreeMap<String, (f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alignment: Option<Alignment>,
}

impl EvalReport {
    /// Writes `label, auroc, f1, mcc, ci_low, ci_high`; undefined cells are empty.
    pub fn write_label_table<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["label", "auroc", "f1", "mcc", "ci_low", "ci_high"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for label in &self.labels {
            let m = &self.per_label[label];
            w.write_record([
                label.clone(),
                opt(m.auroc),
                m.f1.to_string(),
                m.mcc.to_string(),
                opt(m.auroc_ci.map(|c| c.0)),
                opt(m.auroc_ci.map(|c| c.1)),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

struct Column {
    scores: Vec<f64>,
    truth: Vec<bool>,
}

fn macro_over(columns: &[&Column], idx: Option<&[usize]>, threshold: f64) -> Result<MacroMetrics, MetricError> {
    let k = columns.len() as f64;
    let mut acc = MacroMetrics {
        auroc: 0.0,
        f1: 0.0,
        mcc: 0.0,
    };
    for col in columns {
        let (s, t): (Vec<f64>, Vec<bool>) = match idx {
            Some(idx) => idx.iter().map(|&i| (col.scores[i], col.truth[i])).unzip(),
            None => (col.scores.clone(), col.truth.clone()),
        };
        acc.auroc += auroc(&s, &t)?;
        let fm = f1_and_mcc(&s, &t, threshold)?;
        acc.f1 += fm.f1;
        acc.mcc += fm.mcc;
    }
    Ok(MacroMetrics {
        auroc: acc.auroc / k,
        f1: acc.f1 / k,
        mcc: acc.mcc / k,
    })
}

/// Per-label and macro metrics for a probability matrix with one row per
/// study and one column per label. Single-class labels are reported but
/// excluded from every macro average.
pub fn evaluate(
    labels: &[String],
    probabilities: &[Vec<f64>],
    truth: &[Vec<bool>],
    opts: &EvalOptions,
) -> Result<EvalReport, MetricError> {
    if probabilities.len() != truth.len() {
        return Err(MetricError::LengthMismatch {
            scores: probabilities.len(),
            labels: truth.len(),
        });
    }
    if probabilities.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let columns: Vec<Column> = (0..labels.len())
        .map(|k| Column {
            scores: probabilities.iter().map(|row| row[k]).collect(),
            truth: truth.iter().map(|row| row[k]).collect(),
        })
        .collect();

    let mut per_label = BTreeMap::new();
    let mut admitted = Vec::new();
    let mut skipped_labels = Vec::new();
    for (label, col) in labels.iter().zip(&columns) {
        let a = match auroc(&col.scores, &col.truth) {
            Ok(a) => Some(a),
            Err(MetricError::SingleClass) => None,
            Err(e) => return Err(e),
        };
        let fm = f1_and_mcc(&col.scores, &col.truth, opts.threshold)?;
        let auroc_ci = match (&opts.bootstrap, a) {
            (Some(cfg), Some(_)) => {
                let ci = bootstrap_ci(auroc, &col.scores, &col.truth, cfg)?;
                Some((ci.low, ci.high))
            }
            _ => None,
        };
        if a.is_some() {
            admitted.push(col);
        } else {
            log::warn!("label {label:?} has a single class; skipped from macro averages");
            skipped_labels.push(label.clone());
        }
        per_label.insert(
            label.clone(),
            LabelMetrics {
                auroc: a,
                f1: fm.f1,
                mcc: fm.mcc,
                positives: col.truth.iter().filter(|&&t| t).count(),
                auroc_ci,
            },
        );
    }
    if admitted.is_empty() {
        return Err(MetricError::NoAdmittedLabels);
    }
    let macro_metrics = macro_over(&admitted, None, opts.threshold)?;

    let ci = match &opts.bootstrap {
        Some(cfg) => {
            let n = probabilities.len();
            let mut ci = BTreeMap::new();
            type Pick = fn(&MacroMetrics) -> f64;
            let picks: [(&str, Pick); 3] = [
                ("macro_auroc", |m| m.auroc),
                ("macro_f1", |m| m.f1),
                ("macro_mcc", |m| m.mcc),
            ];
            for (name, pick) in picks {
                let interval = bootstrap_ci_indexed(
                    n,
                    |idx| macro_over(&admitted, Some(idx), opts.threshold).map(|m| pick(&m)),
                    cfg,
                )?;
                ci.insert(name.to_string(), (interval.low, interval.high));
            }
            Some(ci)
        }
        None => None,
    };

    Ok(EvalReport {
        labels: labels.to_vec(),
        n_studies: probabilities.len(),
        threshold: opts.threshold,
        per_label,
        macro_metrics,
        skipped_labels,
        ci,
        bootstrap: opts.bootstrap,
        alignment: None,
    })
}
