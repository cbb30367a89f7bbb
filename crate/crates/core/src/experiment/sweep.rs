use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{percent, summarize, ConfusionMatrix, MetricReport};
use crate::optim::OptimizerKind;

use super::config::ExperimentConfig;
use super::report::{emit_report, ReportFormat};
use super::train::{prepare_data, train_on};

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Dropout(Vec<f32>),
    Optimizer(Vec<OptimizerKind>),
}

impl SweepAxis {
    /// 0.1 through 0.6.
    pub fn dropout() -> Self {
        SweepAxis::Dropout(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6])
    }

    pub fn optimizer() -> Self {
        SweepAxis::Optimizer(OptimizerKind::ALL.to_vec())
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Dropout(_) => "dropout",
            SweepAxis::Optimizer(_) => "optimizer",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SweepAxis::Dropout(v) => v.len(),
            SweepAxis::Optimizer(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `dropout`, `optimizer`, or either followed by `=` and a comma list.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, values) = match spec.split_once('=') {
            Some((n, v)) => (n.trim(), Some(v)),
            None => (spec.trim(), None),
        };
        let items = |v: &str| v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect::<Vec<_>>();
        let axis = match (name, values) {
            ("dropout", None) => Self::dropout(),
            ("optimizer", None) => Self::optimizer(),
            ("dropout", Some(v)) => SweepAxis::Dropout(
                items(v)
                    .iter()
                    .map(|s| s.parse().map_err(|_| Error::Config(format!("bad dropout value {s:?}"))))
                    .collect::<Result<_>>()?,
            ),
            ("optimizer", Some(v)) => SweepAxis::Optimizer(items(v).iter().map(|s| s.parse()).collect::<Result<_>>()?),
            _ => return Err(Error::Config(format!("unknown sweep axis {spec:?} (dropout or optimizer)"))),
        };
        if axis.is_empty() {
            return Err(Error::Config("sweep axis has no values".into()));
        }
        Ok(axis)
    }

    fn configs(&self, base: &ExperimentConfig) -> Vec<(String, ExperimentConfig)> {
        let with = |label: String, f: &dyn Fn(&mut ExperimentConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c.out = base.out.join(format!("{}-{label}", self.name()));
            (label, c)
        };
        match self {
            SweepAxis::Dropout(v) => v
                .iter()
                .map(|&p| with(p.to_string(), &|c| c.head_dropout = p))
                .collect(),
            SweepAxis::Optimizer(v) => v
                .iter()
                .map(|&k| with(k.to_string(), &|c| c.optimizer = k))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis_value: String,
    pub train_acc: f64,
    pub val_acc: f64,
    /// Scores from the confusion matrix on the held-out test set, or on the
    /// validation split when no test set is configured.
    pub metrics: MetricReport,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: String,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// Fixed-width table with percentages.
    pub fn render_table(&self) -> String {
        let mut out = format!(
            "{:<10} {:>8} {:>10} {:>8} {:>9} {:>7} {:>8}\n",
            self.axis, "Training", "Validation", "Accuracy", "Precision", "Recall", "F1-Score"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>8} {:>10} {:>8} {:>9} {:>7} {:>8}",
                r.axis_value,
                percent(r.train_acc),
                percent(r.val_acc),
                percent(r.metrics.accuracy),
                percent(r.metrics.precision_macro),
                percent(r.metrics.recall_macro),
                percent(r.metrics.f1_macro)
            );
        }
        out
    }

    /// Every row's metrics recomputed from its confusion matrix.
    pub fn recompute_ok(&self) -> bool {
        self.rows
            .iter()
            .all(|r| summarize(&r.confusion).is_ok_and(|m| m == r.metrics))
    }
}

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_JSON: &str = "sweep.json";

/// One run per axis value with everything else fixed: the data is loaded
/// and split once, and every run uses the same seed, so only the swept
/// setting differs between rows. Each run writes to `out/<axis>-<value>`;
/// the table goes to `out/sweep.csv` and `out/sweep.json`.
pub fn run_sweep(cfg: &ExperimentConfig, axis: &SweepAxis) -> Result<SweepReport> {
    if axis.is_empty() {
        return Err(Error::Config("sweep axis has no values".into()));
    }
    let runs = axis.configs(cfg);
    for (label, c) in &runs {
        c.validate().map_err(|e| e.context(format!("{} = {label}", axis.name())))?;
    }
    let data = prepare_data(cfg)?;
    let mut rows = Vec::with_capacity(runs.len());
    for (label, c) in &runs {
        let report = train_on(c, &data).map_err(|e| e.context(format!("{} = {label}", axis.name())))?;
        let (metrics, confusion) = report.test.unwrap_or((report.validation.clone(), report.confusion));
        rows.push(SweepRow {
            axis_value: label.clone(),
            train_acc: report.train_accuracy,
            val_acc: report.validation.accuracy,
            metrics,
            confusion,
        });
    }
    let report = SweepReport {
        axis: axis.name().to_string(),
        rows,
    };
    emit_report(&report, ReportFormat::Csv, cfg.out.join(SWEEP_CSV))?;
    emit_report(&report, ReportFormat::Text, cfg.out.join(SWEEP_JSON))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        assert_eq!(SweepAxis::parse("dropout").unwrap().len(), 6);
        assert_eq!(SweepAxis::parse("optimizer").unwrap().len(), 3);
        assert_eq!(SweepAxis::parse("dropout=0.2,0.4").unwrap(), SweepAxis::Dropout(vec![0.2, 0.4]));
        assert_eq!(
            SweepAxis::parse("optimizer = sgd").unwrap(),
            SweepAxis::Optimizer(vec![OptimizerKind::Sgd])
        );
        assert!(SweepAxis::parse("lr").is_err());
        assert!(SweepAxis::parse("dropout=").is_err());
        assert!(SweepAxis::parse("optimizer=adagrad").is_err());
    }

    #[test]
    fn row_configs_differ_only_in_the_axis() {
        let base = ExperimentConfig::toy();
        let runs = SweepAxis::dropout().configs(&base);
        let labels: Vec<&str> = runs.iter().map(|(l, _)| l.as_str()).collect();
        assert_eq!(labels, ["0.1", "0.2", "0.3", "0.4", "0.5", "0.6"]);
        for (_, c) in &runs {
            let mut c = c.clone();
            c.head_dropout = base.head_dropout;
            c.out = base.out.clone();
            assert_eq!(c, base);
        }
    }
}
