//! Confusion matrices and the macro-averaged scores derived from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn with_class_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.n_classes() {
            return Err(Error::Invalid(format!(
                "{} class names for a {}-class matrix",
                names.len(),
                self.n_classes()
            )));
        }
        self.class_names = names.to_vec();
        Ok(self)
    }
}

fn check_lengths(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn confusion(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    check_lengths(preds, labels)?;
    if k == 0 {
        return Err(Error::Invalid("confusion matrix needs at least one class".into()));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (i, (&p, &t)) in preds.iter().zip(labels).enumerate() {
        if p >= k || t >= k {
            return Err(Error::Invalid(format!("sample {i}: class index ({t}, {p}) out of range for K={k}")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: (0..k).map(|c| c.to_string()).collect(),
    })
}

pub fn correct_count(preds: &[usize], labels: &[usize]) -> Result<u64> {
    check_lengths(preds, labels)?;
    Ok(preds.iter().zip(labels).filter(|(p, t)| p == t).count() as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub correct_count: u64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision, recall and F1. A zero denominator gives 0.
pub fn per_class(cm: &ConfusionMatrix) -> Vec<(f64, f64, f64)> {
    let k = cm.n_classes();
    (0..k)
        .map(|c| {
            let tp = cm.counts[c][c];
            let predicted: u64 = (0..k).map(|t| cm.counts[t][c]).sum();
            let actual: u64 = cm.counts[c].iter().sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            (p, r, f1)
        })
        .collect()
}

pub fn summarize(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Invalid("cannot summarize an empty confusion matrix".into()));
    }
    let scores = per_class(cm);
    let k = scores.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| scores.iter().map(f).sum::<f64>() / k;
    Ok(MetricReport {
        accuracy: ratio(cm.trace(), total),
        precision_macro: mean(|s| s.0),
        recall_macro: mean(|s| s.1),
        f1_macro: mean(|s| s.2),
        correct_count: cm.trace(),
        total,
    })
}

/// A fraction rendered as a percentage with one decimal, e.g. `92.5`.
pub fn percent(fraction: f64) -> String {
    format!("{:.1}", fraction * 100.0)
}
