use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{self, batches, split, AugmentSpec, Batch, Dataset};
use crate::densenet::{build_backbone, load_model, param_count, save_model, ModelSpec, ParamCount};
use crate::error::{Error, Result};
use crate::metrics::{confusion, summarize, ConfusionMatrix, MetricReport};
use crate::nn::{softmax_rows, Mode};
use crate::optim::{Optimizer, OptimizerHyper};
use crate::seed::{self, stream};
use crate::tensor::{Tape, Tensor};

use super::config::ExperimentConfig;

/// Loss and accuracy of one pass over a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PassStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub stats: PassStats,
    pub predictions: Vec<usize>,
    pub probabilities: Vec<Vec<f32>>,
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Eval-mode pass in dataset order. Mutates nothing.
pub fn evaluate(model: &ModelSpec, ds: &Dataset, batch_size: usize) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(ds.len());
    let mut probabilities = Vec::with_capacity(ds.len());
    let mut loss_sum = 0.0f64;
    let mut correct = 0usize;
    for batch in batches(ds, batch_size, false, 0, 0)? {
        let probs = softmax_rows(&model.infer(&batch.inputs)?)?;
        let k = probs.shape()[1];
        for (row, &t) in probs.data().chunks_exact(k).zip(&batch.targets) {
            // −ln p[true], floored so a zero probability stays finite
            loss_sum -= (row[t] as f64).max(f64::MIN_POSITIVE).ln();
            let p = argmax(row);
            correct += (p == t) as usize;
            predictions.push(p);
            probabilities.push(row.to_vec());
        }
    }
    let n = ds.len() as f64;
    Ok(Evaluation {
        stats: PassStats {
            loss: loss_sum / n,
            accuracy: correct as f64 / n,
        },
        predictions,
        probabilities,
    })
}

/// Loss and correct count of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f32,
    pub correct: usize,
}

/// Training state that is saved and restored as a unit: model, optimizer
/// buffers and the position in the epoch sequence. Dropout masks are drawn
/// from streams keyed by `(seed, epoch, batch)`, shuffles by `(seed,
/// epoch)`, so resuming at an epoch boundary replays the same trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: ModelSpec,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub batch_size: usize,
    pub augment: Option<AugmentSpec>,
    /// Epochs completed so far.
    pub epoch: u64,
}

#[derive(Serialize, Deserialize)]
struct TrainerState {
    seed: u64,
    batch_size: usize,
    augment: Option<AugmentSpec>,
    epoch: u64,
}

pub const MODEL_FILE: &str = "model.dgm";
pub const OPTIMIZER_FILE: &str = "optimizer.dgo";
const TRAINER_FILE: &str = "trainer.json";

impl Trainer {
    pub fn new(
        model: ModelSpec,
        hyper: OptimizerHyper,
        seed: u64,
        batch_size: usize,
        augment: Option<AugmentSpec>,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let optimizer = Optimizer::new(hyper, &model.trainable_param_shapes())?;
        Ok(Trainer {
            model,
            optimizer,
            seed,
            batch_size,
            augment,
            epoch: 0,
        })
    }

    /// Forward, backward and one optimizer update on `batch`.
    pub fn step(&mut self, batch: &Batch, batch_index: u64) -> Result<StepOutcome> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.inputs.clone());
        let mut rng = seed::rng(self.seed, &[stream::DROPOUT, self.epoch, batch_index]);
        let pass = self.model.forward(&mut tape, x, Mode::Train, &mut rng)?;
        let (loss, probs) = tape.softmax_cross_entropy(pass.logits, &batch.labels)?;
        let grads = tape.backward(loss)?;
        let grads: Vec<&Tensor<f32>> = pass
            .params
            .iter()
            .map(|b| {
                grads
                    .get(b.var)
                    .ok_or_else(|| Error::Backward(format!("no gradient for layer {} slot {}", b.layer, b.slot)))
            })
            .collect::<Result<_>>()?;
        let mut params = self.model.trainable_params_mut();
        self.optimizer.step(&mut params, &grads)?;
        self.model.apply_bn_updates(&pass.bn_updates);
        let k = probs.shape()[1];
        let correct = probs
            .data()
            .chunks_exact(k)
            .zip(&batch.targets)
            .filter(|(row, &t)| argmax(row) == t)
            .count();
        Ok(StepOutcome {
            loss: tape.value(loss).item(),
            correct,
        })
    }

    /// One shuffled pass over `ds`. Returns the sample-weighted mean loss,
    /// the train-mode accuracy and every step's loss.
    pub fn train_epoch(&mut self, ds: &Dataset) -> Result<(PassStats, Vec<f32>)> {
        let mut losses = Vec::new();
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        let epoch_batches = batches(ds, self.batch_size, true, self.seed, self.epoch)?.with_augment(self.augment);
        for (i, batch) in epoch_batches.enumerate() {
            let out = self.step(&batch, i as u64)?;
            losses.push(out.loss);
            loss_sum += out.loss as f64 * batch.targets.len() as f64;
            correct += out.correct;
        }
        self.epoch += 1;
        let n = ds.len() as f64;
        Ok((
            PassStats {
                loss: loss_sum / n,
                accuracy: correct as f64 / n,
            },
            losses,
        ))
    }

    pub fn save_checkpoint(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_model(&self.model, dir.join(MODEL_FILE))?;
        self.optimizer.save(dir.join(OPTIMIZER_FILE))?;
        let state = TrainerState {
            seed: self.seed,
            batch_size: self.batch_size,
            augment: self.augment,
            epoch: self.epoch,
        };
        let path = dir.join(TRAINER_FILE);
        let text = serde_json::to_string_pretty(&state).map_err(|e| Error::Header(e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let model = load_model(dir.join(MODEL_FILE))?;
        let optimizer = Optimizer::load(dir.join(OPTIMIZER_FILE))?;
        let path = dir.join(TRAINER_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let state: TrainerState = serde_json::from_str(&text).map_err(|e| Error::Header(e.to_string()))?;
        if optimizer.state.moments.len() != model.trainable_param_shapes().len() {
            return Err(Error::Invalid(format!(
                "{}: optimizer state does not match the model's trainable parameters",
                dir.display()
            )));
        }
        Ok(Trainer {
            model,
            optimizer,
            seed: state.seed,
            batch_size: state.batch_size,
            augment: state.augment,
            epoch: state.epoch,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub curve: Vec<EpochRecord>,
    /// Train-mode accuracy of the last epoch (0 when no epoch ran).
    pub train_accuracy: f64,
    /// Validation metrics of the final model.
    pub validation: MetricReport,
    pub confusion: ConfusionMatrix,
    /// Metrics on `test_dir` when configured.
    pub test: Option<(MetricReport, ConfusionMatrix)>,
    pub params: ParamCount,
    pub model_path: PathBuf,
    /// Not serialized, so reports of identical runs are byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Train and validation splits plus an optional test set, all resized to
/// the configured input.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<Prepared> {
    let s = cfg.input_size;
    let full = match (&cfg.data_root, &cfg.synthetic) {
        (Some(root), _) => data::load_dataset(root)?,
        (None, Some(spec)) => data::synthetic_blobs(spec.task, spec.per_class, s, cfg.seed)?,
        (None, None) => return Err(Error::Config("set data_root or synthetic.task".into())),
    };
    let full = full.resized(s, s);
    let (train, val) = split(&full, cfg.train_fraction, cfg.seed)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Data(format!(
            "split of {} records at {} leaves an empty side",
            full.len(),
            cfg.train_fraction
        )));
    }
    let test = match &cfg.test_dir {
        Some(dir) => {
            let t = data::load_dataset(dir)?.resized(s, s);
            if t.class_names != full.class_names {
                return Err(Error::Data(format!(
                    "{}: classes {:?} differ from training classes {:?}",
                    dir.display(),
                    t.class_names,
                    full.class_names
                )));
            }
            Some(t)
        }
        None => None,
    };
    Ok(Prepared { train, val, test })
}

/// Fresh or pretrained backbone, fresh head for `class_names`, frozen as
/// configured.
pub fn build_for(cfg: &ExperimentConfig, class_names: &[String]) -> Result<ModelSpec> {
    let k = class_names.len();
    if let Some(want) = cfg.head_classes {
        if want != k {
            return Err(Error::Config(format!("head.classes = {want} but the data has {k} classes")));
        }
    }
    let mut model = match &cfg.pretrained {
        Some(path) => {
            let mut m = load_model(path)?;
            let expected = [3, cfg.input_size, cfg.input_size];
            if m.input_shape() != expected {
                return Err(Error::Config(format!(
                    "{}: backbone expects input {:?}, config gives {:?}",
                    path.display(),
                    m.input_shape(),
                    expected
                )));
            }
            m.layers.truncate(m.meta.backbone_len);
            for l in &mut m.layers {
                l.trainable = true;
            }
            m.meta.seed = cfg.seed;
            m
        }
        None => build_backbone(&cfg.backbone(), cfg.seed)?,
    };
    model.replace_head(&cfg.head(k))?;
    if cfg.freeze {
        model.freeze_backbone()?;
    }
    model.meta.class_names = class_names.to_vec();
    Ok(model)
}

fn metrics_of(eval: &Evaluation, ds: &Dataset) -> Result<(MetricReport, ConfusionMatrix)> {
    let cm = confusion(&eval.predictions, &ds.labels(), ds.n_classes())?.with_class_names(&ds.class_names)?;
    Ok((summarize(&cm)?, cm))
}

/// Builds, trains and evaluates per `cfg` on already prepared data, then
/// writes the model, optimizer state, JSON report and curve CSV to
/// `cfg.out`.
pub fn train_on(cfg: &ExperimentConfig, data: &Prepared) -> Result<RunReport> {
    let started = Instant::now();
    let model = build_for(cfg, &data.train.class_names)?;
    let mut trainer = Trainer::new(model, cfg.hyper(), cfg.seed, cfg.batch_size, cfg.augment)?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let (train, _) = trainer.train_epoch(&data.train)?;
        let val = evaluate(&trainer.model, &data.val, cfg.batch_size)?;
        curve.push(EpochRecord {
            epoch: e + 1,
            train_loss: train.loss,
            train_acc: train.accuracy,
            val_loss: val.stats.loss,
            val_acc: val.stats.accuracy,
        });
    }
    let (validation, cm) = metrics_of(&evaluate(&trainer.model, &data.val, cfg.batch_size)?, &data.val)?;
    let test = match &data.test {
        Some(t) => Some(metrics_of(&evaluate(&trainer.model, t, cfg.batch_size)?, t)?),
        None => None,
    };
    trainer.save_checkpoint(&cfg.out)?;
    let report = RunReport {
        config: cfg.clone(),
        train_accuracy: curve.last().map_or(0.0, |r| r.train_acc),
        curve,
        validation,
        confusion: cm,
        test,
        params: param_count(&trainer.model),
        model_path: cfg.out.join(MODEL_FILE),
        wall_time_secs: 0.0,
    };
    super::report::write_run(&report, &cfg.out)?;
    Ok(RunReport {
        wall_time_secs: started.elapsed().as_secs_f64(),
        ..report
    })
}

pub fn run_training(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    train_on(cfg, &data)
}
