use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AugmentSpec, SyntheticTask};
use crate::densenet::{DenseNetConfig, HeadConfig};
use crate::error::{Error, Result};
use crate::optim::{OptimizerHyper, OptimizerKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Densenet201,
    Toy,
}

/// Seeded blob images in place of a data directory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub task: SyntheticTask,
    pub per_class: usize,
}

/// Optimizer choice plus explicit overrides of its defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOverrides {
    pub learning_rate: Option<f32>,
    pub beta1: Option<f32>,
    pub beta2: Option<f32>,
    pub momentum: Option<f32>,
    pub rho: Option<f32>,
    pub epsilon: Option<f32>,
}

/// Everything a run needs. Parsed from flat `key = value` text; see
/// [`ExperimentConfig::set`] for the key list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_root: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    /// Optional held-out directory scored by `eval` and by sweep rows.
    pub test_dir: Option<PathBuf>,
    pub input_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub preset: Preset,
    pub block_layers: Option<Vec<usize>>,
    pub growth_rate: Option<usize>,
    pub bottleneck_width: Option<usize>,
    pub compression: Option<f64>,
    pub stem_channels: Option<usize>,
    pub head_neurons: usize,
    pub head_dropout: f32,
    pub head_classes: Option<usize>,
    pub optimizer: OptimizerKind,
    pub optimizer_overrides: OptimizerOverrides,
    pub freeze: bool,
    /// Model file whose backbone replaces the freshly built one.
    pub pretrained: Option<PathBuf>,
    pub augment: Option<AugmentSpec>,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_root: None,
            synthetic: None,
            test_dir: None,
            input_size: 224,
            epochs: 100,
            batch_size: 64,
            train_fraction: 0.8,
            seed: 0,
            preset: Preset::Densenet201,
            block_layers: None,
            growth_rate: None,
            bottleneck_width: None,
            compression: None,
            stem_channels: None,
            head_neurons: 512,
            head_dropout: 0.1,
            head_classes: None,
            optimizer: OptimizerKind::Adam,
            optimizer_overrides: OptimizerOverrides::default(),
            freeze: true,
            pretrained: None,
            augment: Some(AugmentSpec::default()),
            out: PathBuf::from("runs/latest"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty() && value != "none").then(|| PathBuf::from(value))
}

impl ExperimentConfig {
    /// Every accepted key.
    pub const KEYS: &'static [&'static str] = &[
        "data_root",
        "test_dir",
        "synthetic.task",
        "synthetic.per_class",
        "input_size",
        "epochs",
        "batch_size",
        "train_fraction",
        "seed",
        "model.preset",
        "model.block_layers",
        "model.growth_rate",
        "model.bottleneck_width",
        "model.compression",
        "model.stem_channels",
        "model.pretrained",
        "head.neurons",
        "head.dropout",
        "head.activation",
        "head.classes",
        "optimizer.kind",
        "optimizer.learning_rate",
        "optimizer.beta1",
        "optimizer.beta2",
        "optimizer.momentum",
        "optimizer.rho",
        "optimizer.epsilon",
        "freeze",
        "augment.enabled",
        "augment.rotation_degrees",
        "augment.hflip_prob",
        "augment.vflip_prob",
        "out",
    ];

    /// A small preset: toy backbone at 32×32, 30 epochs, batch 32, head
    /// width 32, seeded synthetic data.
    pub fn toy() -> Self {
        ExperimentConfig {
            synthetic: Some(SyntheticSpec {
                task: SyntheticTask::B,
                per_class: 40,
            }),
            input_size: 32,
            epochs: 30,
            batch_size: 32,
            preset: Preset::Toy,
            head_neurons: 32,
            freeze: false,
            ..Self::default()
        }
    }

    /// Parses `key = value` lines. `#` starts a comment, blank lines are
    /// ignored and unknown keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("config: "))))?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let o = &mut self.optimizer_overrides;
        match key {
            "data_root" => self.data_root = optional_path(value),
            "test_dir" => self.test_dir = optional_path(value),
            "synthetic.task" => {
                let task = match value.to_ascii_lowercase().as_str() {
                    "none" => {
                        self.synthetic = None;
                        return Ok(());
                    }
                    "a" => SyntheticTask::A,
                    "b" => SyntheticTask::B,
                    _ => return Err(Error::Config(format!("synthetic.task: expected a, b or none, got {value:?}"))),
                };
                let per_class = self.synthetic.map_or(40, |s| s.per_class);
                self.synthetic = Some(SyntheticSpec { task, per_class });
            }
            "synthetic.per_class" => {
                let per_class = parse_num(key, value)?;
                let task = self.synthetic.map_or(SyntheticTask::B, |s| s.task);
                self.synthetic = Some(SyntheticSpec { task, per_class });
            }
            "input_size" => self.input_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "train_fraction" => self.train_fraction = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "model.preset" => {
                self.preset = match value {
                    "densenet201" => Preset::Densenet201,
                    "toy" => Preset::Toy,
                    _ => return Err(Error::Config(format!("model.preset: unknown preset {value:?}"))),
                }
            }
            "model.block_layers" => {
                let layers = value
                    .split(',')
                    .map(|v| parse_num(key, v.trim()))
                    .collect::<Result<Vec<usize>>>()?;
                self.block_layers = Some(layers);
            }
            "model.growth_rate" => self.growth_rate = Some(parse_num(key, value)?),
            "model.bottleneck_width" => self.bottleneck_width = Some(parse_num(key, value)?),
            "model.compression" => self.compression = Some(parse_num(key, value)?),
            "model.stem_channels" => self.stem_channels = Some(parse_num(key, value)?),
            "model.pretrained" => self.pretrained = optional_path(value),
            "head.neurons" => self.head_neurons = parse_num(key, value)?,
            "head.dropout" => self.head_dropout = parse_num(key, value)?,
            "head.activation" => {
                if value != "relu" {
                    return Err(Error::Config(format!("head.activation: only relu is supported, got {value:?}")));
                }
            }
            "head.classes" => self.head_classes = Some(parse_num(key, value)?),
            "optimizer.kind" => self.optimizer = value.parse()?,
            "optimizer.learning_rate" => o.learning_rate = Some(parse_num(key, value)?),
            "optimizer.beta1" => o.beta1 = Some(parse_num(key, value)?),
            "optimizer.beta2" => o.beta2 = Some(parse_num(key, value)?),
            "optimizer.momentum" => o.momentum = Some(parse_num(key, value)?),
            "optimizer.rho" => o.rho = Some(parse_num(key, value)?),
            "optimizer.epsilon" => o.epsilon = Some(parse_num(key, value)?),
            "freeze" => self.freeze = parse_bool(key, value)?,
            "augment.enabled" => {
                self.augment = if parse_bool(key, value)? {
                    Some(self.augment.unwrap_or_default())
                } else {
                    None
                }
            }
            "augment.rotation_degrees" => self.augment_mut().rotation_degrees = parse_num(key, value)?,
            "augment.hflip_prob" => self.augment_mut().hflip_prob = parse_num(key, value)?,
            "augment.vflip_prob" => self.augment_mut().vflip_prob = parse_num(key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn augment_mut(&mut self) -> &mut AugmentSpec {
        self.augment.get_or_insert_with(AugmentSpec::default)
    }

    pub fn backbone(&self) -> DenseNetConfig {
        let mut c = match self.preset {
            Preset::Densenet201 => DenseNetConfig::densenet201(),
            Preset::Toy => DenseNetConfig::toy(),
        };
        if let Some(b) = &self.block_layers {
            c.block_layers = b.clone();
        }
        if let Some(k) = self.growth_rate {
            c.growth_rate = k;
            c.bottleneck_width = 4 * k;
        }
        if let Some(w) = self.bottleneck_width {
            c.bottleneck_width = w;
        }
        if let Some(t) = self.compression {
            c.compression = t;
        }
        if let Some(s) = self.stem_channels {
            c.stem_channels = s;
        }
        c.with_input(self.input_size, self.input_size)
    }

    pub fn head(&self, n_classes: usize) -> HeadConfig {
        HeadConfig::new(self.head_neurons, self.head_dropout, n_classes)
    }

    pub fn hyper(&self) -> OptimizerHyper {
        let mut h = OptimizerHyper::defaults(self.optimizer);
        let o = &self.optimizer_overrides;
        h.learning_rate = o.learning_rate.unwrap_or(h.learning_rate);
        h.beta1 = o.beta1.unwrap_or(h.beta1);
        h.beta2 = o.beta2.unwrap_or(h.beta2);
        h.momentum = o.momentum.unwrap_or(h.momentum);
        h.rho = o.rho.unwrap_or(h.rho);
        h.epsilon = o.epsilon.unwrap_or(h.epsilon);
        h
    }

    /// Checks every bound before any work starts.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        match (&self.data_root, &self.synthetic) {
            (None, None) => return bad("set data_root or synthetic.task"),
            (Some(_), Some(_)) => return bad("data_root and synthetic.task are mutually exclusive"),
            (None, Some(s)) if s.per_class == 0 => return bad("synthetic.per_class must be ≥ 1"),
            _ => {}
        }
        if self.input_size == 0 {
            return bad("input_size must be ≥ 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction must lie in (0, 1)");
        }
        self.backbone().validate()?;
        self.head(self.head_classes.unwrap_or(3)).validate()?;
        self.hyper().validate()?;
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        Ok(())
    }

    /// `key = value` text that parses back to this config.
    pub fn to_text(&self) -> String {
        let mut lines = Vec::new();
        let mut put = |k: &str, v: String| lines.push(format!("{k} = {v}"));
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        put("data_root", path(&self.data_root));
        put("test_dir", path(&self.test_dir));
        match &self.synthetic {
            Some(s) => {
                put("synthetic.task", format!("{:?}", s.task).to_lowercase());
                put("synthetic.per_class", s.per_class.to_string());
            }
            None => put("synthetic.task", "none".into()),
        }
        put("input_size", self.input_size.to_string());
        put("epochs", self.epochs.to_string());
        put("batch_size", self.batch_size.to_string());
        put("train_fraction", self.train_fraction.to_string());
        put("seed", self.seed.to_string());
        let b = self.backbone();
        put("model.preset", format!("{:?}", self.preset).to_lowercase());
        put(
            "model.block_layers",
            b.block_layers.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
        );
        put("model.growth_rate", b.growth_rate.to_string());
        put("model.bottleneck_width", b.bottleneck_width.to_string());
        put("model.compression", b.compression.to_string());
        put("model.stem_channels", b.stem_channels.to_string());
        put("model.pretrained", path(&self.pretrained));
        put("head.neurons", self.head_neurons.to_string());
        put("head.dropout", self.head_dropout.to_string());
        put("head.activation", "relu".into());
        if let Some(k) = self.head_classes {
            put("head.classes", k.to_string());
        }
        let h = self.hyper();
        put("optimizer.kind", h.kind.to_string());
        put("optimizer.learning_rate", h.learning_rate.to_string());
        put("optimizer.beta1", h.beta1.to_string());
        put("optimizer.beta2", h.beta2.to_string());
        put("optimizer.momentum", h.momentum.to_string());
        put("optimizer.rho", h.rho.to_string());
        put("optimizer.epsilon", h.epsilon.to_string());
        put("freeze", self.freeze.to_string());
        put("augment.enabled", self.augment.is_some().to_string());
        if let Some(a) = &self.augment {
            put("augment.rotation_degrees", a.rotation_degrees.to_string());
            put("augment.hflip_prob", a.hflip_prob.to_string());
            put("augment.vflip_prob", a.vflip_prob.to_string());
        }
        put("out", self.out.display().to_string());
        lines.join("\n") + "\n"
    }
}
