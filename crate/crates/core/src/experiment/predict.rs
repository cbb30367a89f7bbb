use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{read_image, Dataset};
use crate::densenet::{load_model, ModelSpec};
use crate::error::{Error, Result};
use crate::metrics::{confusion, correct_count, summarize, ConfusionMatrix, MetricReport};

use super::train::evaluate;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub source: String,
    pub predicted: usize,
    pub class_name: String,
    pub probabilities: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub correct_count: u64,
    pub total: u64,
    pub summary: MetricReport,
    pub confusion: ConfusionMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub class_names: Vec<String>,
    pub predictions: Vec<Prediction>,
    /// Present only when labels were supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PredictionMetrics>,
}

impl crate::experiment::Report for PredictionReport {
    /// `source,predicted,class_name,p0,p1,…`
    fn to_csv(&self) -> String {
        let mut out = String::from("source,predicted,class_name");
        for i in 0..self.class_names.len() {
            out += &format!(",p{i}");
        }
        out.push('\n');
        for p in &self.predictions {
            out += &format!("{},{},{}", p.source, p.predicted, p.class_name);
            for v in &p.probabilities {
                out += &format!(",{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}

fn class_names_of(model: &ModelSpec) -> Result<Vec<String>> {
    let k = model
        .n_classes()
        .ok_or_else(|| Error::Invalid("model does not end in a class layer".into()))?;
    if model.meta.class_names.len() == k {
        Ok(model.meta.class_names.clone())
    } else {
        Ok((0..k).map(|c| c.to_string()).collect())
    }
}

/// Classifies `ds` (resized to the model input). When `labeled`, the
/// dataset's labels are scored; its class count must match the model's.
pub fn predict_dataset(model: &ModelSpec, ds: &Dataset, labeled: bool) -> Result<PredictionReport> {
    let names = class_names_of(model)?;
    if labeled && ds.n_classes() != names.len() {
        return Err(Error::Data(format!(
            "labels cover {} classes but the model predicts {}",
            ds.n_classes(),
            names.len()
        )));
    }
    let (h, w) = match model.input_shape() {
        [3, h, w] => (*h, *w),
        other => return Err(Error::Invalid(format!("model input {other:?} is not an RGB image"))),
    };
    // scoring needs labels < K even when unlabeled; relabel to 0 then
    let mut work = ds.resized(h, w);
    work.class_names = names.clone();
    if !labeled {
        work.records.iter_mut().for_each(|r| r.label = 0);
    }
    let eval = evaluate(model, &work, 32)?;
    let predictions = eval
        .predictions
        .iter()
        .zip(eval.probabilities)
        .zip(&ds.records)
        .map(|((&p, probs), r)| Prediction {
            source: r.source_id.clone(),
            predicted: p,
            class_name: names[p].clone(),
            probabilities: probs,
        })
        .collect();
    let metrics = if labeled {
        let labels = ds.labels();
        let cm = confusion(&eval.predictions, &labels, names.len())?.with_class_names(&names)?;
        Some(PredictionMetrics {
            correct_count: correct_count(&eval.predictions, &labels)?,
            total: labels.len() as u64,
            summary: summarize(&cm)?,
            confusion: cm,
        })
    } else {
        None
    };
    Ok(PredictionReport {
        class_names: names,
        predictions,
        metrics,
    })
}

/// Loads the model and classifies each input file. `labels`, if given,
/// holds one class index per input.
pub fn predict_cmd(model_path: &Path, inputs: &[PathBuf], labels: Option<&[usize]>) -> Result<PredictionReport> {
    let model = load_model(model_path)?;
    let names = class_names_of(&model)?;
    if inputs.is_empty() {
        return Err(Error::Data("no input images".into()));
    }
    if let Some(l) = labels {
        if l.len() != inputs.len() {
            return Err(Error::Data(format!("{} labels for {} images", l.len(), inputs.len())));
        }
        if let Some(&bad) = l.iter().find(|&&c| c >= names.len()) {
            return Err(Error::Data(format!(
                "label {bad} outside the model's {} classes",
                names.len()
            )));
        }
    }
    let records = inputs
        .iter()
        .enumerate()
        .map(|(i, p)| read_image(p, labels.map_or(0, |l| l[i]), p.display().to_string()))
        .collect::<Result<Vec<_>>>()?;
    let ds = Dataset::new(records, names)?;
    predict_dataset(&model, &ds, labels.is_some())
}
