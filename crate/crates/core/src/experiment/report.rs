use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::percent;

use super::sweep::SweepReport;
use super::train::RunReport;

pub const CURVE_HEADER: &str = "epoch,train_loss,train_acc,val_loss,val_acc";
pub const SWEEP_HEADER: &str = "axis_value,train_acc,val_acc,cm_acc,precision,recall,f1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    /// Pretty-printed JSON.
    Text,
}

/// Something that renders as a CSV table and as structured text.
pub trait Report: Serialize {
    fn to_csv(&self) -> String;

    fn to_text(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|s| s + "\n")
            .map_err(|e| Error::Invalid(format!("report serialization: {e}")))
    }
}

impl Report for RunReport {
    /// The per-epoch curve. Accuracies in percent with one decimal.
    fn to_csv(&self) -> String {
        let mut out = format!("{CURVE_HEADER}\n");
        for r in &self.curve {
            let _ = writeln!(
                out,
                "{},{:.6},{},{:.6},{}",
                r.epoch,
                r.train_loss,
                percent(r.train_acc),
                r.val_loss,
                percent(r.val_acc)
            );
        }
        out
    }
}

impl Report for SweepReport {
    fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
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
}

pub fn emit_report(report: &impl Report, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let body = match format {
        ReportFormat::Csv => report.to_csv(),
        ReportFormat::Text => report.to_text()?,
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub const REPORT_FILE: &str = "report.json";
pub const CURVE_FILE: &str = "curve.csv";

pub(crate) fn write_run(report: &RunReport, dir: &Path) -> Result<()> {
    emit_report(report, ReportFormat::Text, dir.join(REPORT_FILE))?;
    emit_report(report, ReportFormat::Csv, dir.join(CURVE_FILE))
}
