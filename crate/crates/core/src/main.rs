use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use leafnet::data::{load_dataset, SyntheticTask};
use leafnet::densenet::{load_model, param_count, LayerKind, ModelSpec};
use leafnet::experiment::{
    emit_report, predict_cmd, predict_dataset, run_sweep, run_training, ExperimentConfig, PredictionReport, Report,
    ReportFormat, SweepAxis, SyntheticSpec,
};
use leafnet::metrics::percent;
use leafnet::{Error, Result};

#[derive(Parser)]
#[command(name = "leafnet", version, about = "DenseNet transfer-learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write model, curve and report to --out.
    Train(Common),
    /// Repeat training over dropout rates or optimizers.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `dropout`, `optimizer`, or e.g. `dropout=0.1,0.3`.
        #[arg(long, default_value = "dropout")]
        axis: String,
    },
    /// Classify images with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Score a directory-per-class tree instead of loose files.
        #[arg(long)]
        data_dir: Option<PathBuf>,
        /// Comma-separated class index per input file.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<usize>>,
        /// Write predictions.json and predictions.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
        files: Vec<PathBuf>,
    },
    /// Score a saved model on a labeled directory (defaults to the
    /// config's test_dir, then data_root).
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the layer stack, shape trace and parameter counts.
    Inspect {
        /// Inspect a saved model instead of the configured architecture.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout: Option<f32>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use seeded synthetic blob images (task a or b) instead of a directory.
    #[arg(long, value_name = "TASK")]
    synthetic: Option<String>,
    /// Start from the toy preset instead of the full-size defaults.
    #[arg(long)]
    toy: bool,
    /// Any config key, e.g. `--set head.neurons=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    /// Defaults, then the config file, then flags.
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = if self.toy { ExperimentConfig::toy() } else { ExperimentConfig::default() };
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            cfg.apply_text(&text).map_err(|e| e.context(path.display().to_string()))?;
        }
        if let Some(d) = &self.data_dir {
            cfg.data_root = Some(d.clone());
            cfg.synthetic = None;
        }
        if let Some(task) = &self.synthetic {
            let task = match task.to_ascii_lowercase().as_str() {
                "a" => SyntheticTask::A,
                "b" => SyntheticTask::B,
                _ => return Err(Error::Config(format!("--synthetic expects a or b, got {task:?}"))),
            };
            let per_class = cfg.synthetic.map_or(40, |s| s.per_class);
            cfg.synthetic = Some(SyntheticSpec { task, per_class });
            cfg.data_root = None;
        }
        let set = |cfg: &mut ExperimentConfig, k: &str, v: String| cfg.set(k, &v);
        if let Some(v) = self.seed {
            set(&mut cfg, "seed", v.to_string())?;
        }
        if let Some(v) = self.epochs {
            set(&mut cfg, "epochs", v.to_string())?;
        }
        if let Some(v) = self.batch_size {
            set(&mut cfg, "batch_size", v.to_string())?;
        }
        if let Some(v) = self.dropout {
            set(&mut cfg, "head.dropout", v.to_string())?;
        }
        if let Some(v) = &self.optimizer {
            set(&mut cfg, "optimizer.kind", v.clone())?;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

fn print_prediction(report: &PredictionReport) {
    for p in &report.predictions {
        let probs: Vec<String> = p.probabilities.iter().map(|v| format!("{v:.4}")).collect();
        println!("{}\t{}\t[{}]", p.source, p.class_name, probs.join(", "));
    }
    if let Some(m) = &report.metrics {
        println!(
            "correct {}/{}  accuracy {}%  precision {}%  recall {}%  f1 {}%",
            m.correct_count,
            m.total,
            percent(m.summary.accuracy),
            percent(m.summary.precision_macro),
            percent(m.summary.recall_macro),
            percent(m.summary.f1_macro)
        );
        println!("confusion (rows = true, cols = predicted): {:?}", m.confusion.counts);
    }
}

fn write_prediction(report: &PredictionReport, out: &Option<PathBuf>) -> Result<()> {
    if let Some(dir) = out {
        emit_report(report, ReportFormat::Text, dir.join("predictions.json"))?;
        emit_report(report, ReportFormat::Csv, dir.join("predictions.csv"))?;
    }
    Ok(())
}

fn describe(model: &ModelSpec) {
    for (i, l) in model.layers.iter().enumerate() {
        let kind = match &l.kind {
            LayerKind::Conv2d {
                out_channels,
                kernel,
                stride,
                pad,
                ..
            } => format!("conv {kernel}×{kernel}/{stride} p{pad} → {out_channels}"),
            LayerKind::Dense { outputs, .. } => format!("dense → {outputs}"),
            LayerKind::Concat { from } => format!("concat with input of layer {from}"),
            other => format!("{other:?}"),
        };
        let frozen = if l.trainable { "" } else { " (frozen)" };
        println!("{i:>4} {:<28} {:<34} {:?}{frozen}", l.name, kind, l.out_shape);
    }
    println!("\nstage trace:");
    for s in &model.meta.trace {
        println!("  {:<14} {:>5} × {} × {}", s.stage, s.channels, s.height, s.width);
    }
    let c = param_count(model);
    println!("\nparameters: {} trainable, {} total", c.trainable, c.total);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = common.config()?;
            let report = run_training(&cfg)?;
            print!("{}", report.to_csv());
            println!(
                "validation accuracy {}%  precision {}%  recall {}%  f1 {}%",
                percent(report.validation.accuracy),
                percent(report.validation.precision_macro),
                percent(report.validation.recall_macro),
                percent(report.validation.f1_macro)
            );
            println!("model written to {} ({:.1}s)", report.model_path.display(), report.wall_time_secs);
        }
        Command::Sweep { common, axis } => {
            let cfg = common.config()?;
            let report = run_sweep(&cfg, &SweepAxis::parse(&axis)?)?;
            print!("{}", report.render_table());
            println!("sweep written to {}", cfg.out.display());
        }
        Command::Predict {
            model,
            data_dir,
            labels,
            out,
            files,
        } => {
            let report = match data_dir {
                Some(dir) => {
                    if !files.is_empty() || labels.is_some() {
                        return Err(Error::Config("--data-dir cannot be combined with files or --labels".into()));
                    }
                    predict_dataset(&load_model(&model)?, &load_dataset(dir)?, true)?
                }
                None => predict_cmd(&model, &files, labels.as_deref())?,
            };
            print_prediction(&report);
            write_prediction(&report, &out)?;
        }
        Command::Eval { model, common } => {
            let cfg = common.config()?;
            let dir = cfg
                .test_dir
                .clone()
                .or(cfg.data_root.clone())
                .ok_or_else(|| Error::Config("eval needs --data-dir or test_dir".into()))?;
            let report = predict_dataset(&load_model(&model)?, &load_dataset(dir)?, true)?;
            if let Some(m) = &report.metrics {
                println!(
                    "correct {}/{}  accuracy {}%  precision {}%  recall {}%  f1 {}%",
                    m.correct_count,
                    m.total,
                    percent(m.summary.accuracy),
                    percent(m.summary.precision_macro),
                    percent(m.summary.recall_macro),
                    percent(m.summary.f1_macro)
                );
                println!("confusion (rows = true, cols = predicted): {:?}", m.confusion.counts);
            }
            write_prediction(&report, &common.out)?;
        }
        Command::Inspect { model, common } => {
            let spec = match model {
                Some(path) => load_model(path)?,
                None => {
                    let cfg = common.config()?;
                    cfg.backbone().validate()?;
                    let k = cfg.head_classes.unwrap_or(3);
                    leafnet::densenet::build_model(&cfg.backbone(), &cfg.head(k), cfg.seed)?
                }
            };
            describe(&spec);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
