use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Backbone hyperparameters. `input_size` is (H, W, C).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNetConfig {
    pub block_layers: Vec<usize>,
    pub growth_rate: usize,
    pub bottleneck_width: usize,
    pub compression: f64,
    pub stem_channels: usize,
    pub input_size: (usize, usize, usize),
}

impl DenseNetConfig {
    /// DenseNet-201: blocks of 6, 12, 48 and 32 units, k = 32, θ = 0.5.
    pub fn densenet201() -> Self {
        DenseNetConfig {
            block_layers: vec![6, 12, 48, 32],
            growth_rate: 32,
            bottleneck_width: 128,
            compression: 0.5,
            stem_channels: 64,
            input_size: (224, 224, 3),
        }
    }

    /// Two small blocks for desk-scale experiments.
    pub fn toy() -> Self {
        DenseNetConfig {
            block_layers: vec![2, 2],
            growth_rate: 8,
            bottleneck_width: 32,
            compression: 0.5,
            stem_channels: 16,
            input_size: (32, 32, 3),
        }
    }

    pub fn with_input(mut self, h: usize, w: usize) -> Self {
        self.input_size.0 = h;
        self.input_size.1 = w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.block_layers.is_empty() || self.block_layers.contains(&0) {
            return bad(format!("block_layers must be non-empty and positive: {:?}", self.block_layers));
        }
        if self.growth_rate == 0 || self.bottleneck_width == 0 || self.stem_channels == 0 {
            return bad("growth_rate, bottleneck_width and stem_channels must be ≥ 1".into());
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression {} outside (0, 1]", self.compression));
        }
        let (h, w, c) = self.input_size;
        if h == 0 || w == 0 || c == 0 {
            return bad(format!("input size {:?} has a zero extent", self.input_size));
        }
        // walk the channel/spatial recurrence
        let mut ch = self.stem_channels;
        let stem = |s: usize| {
            crate::nn::conv_output_size(s, 7, 2, 3).and_then(|s| crate::nn::conv_output_size(s, 3, 2, 1))
        };
        let (Some(mut sh), Some(mut sw)) = (stem(h), stem(w)) else {
            return bad(format!("input {h}×{w} too small for the stem"));
        };
        for (i, &l) in self.block_layers.iter().enumerate() {
            ch += l * self.growth_rate;
            if i + 1 < self.block_layers.len() {
                let next = (self.compression * ch as f64).floor() as usize;
                if next == 0 {
                    return bad(format!("transition {} compresses {ch} channels to 0", i + 1));
                }
                if sh % 2 != 0 || sw % 2 != 0 {
                    return bad(format!("transition {} cannot halve odd spatial size {sh}×{sw}", i + 1));
                }
                ch = next;
                sh /= 2;
                sw /= 2;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// Classification head: dense widths 3n, n, 2n, n, n/2 each followed by
/// the activation and dropout, then a dense layer to the class logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub neurons: usize,
    pub dropout: f32,
    pub activation: Activation,
    pub n_classes: usize,
}

impl HeadConfig {
    pub fn new(neurons: usize, dropout: f32, n_classes: usize) -> Self {
        HeadConfig {
            neurons,
            dropout,
            activation: Activation::Relu,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.neurons < 2 || self.neurons % 2 != 0 {
            return Err(Error::Config(format!(
                "head neurons must be even and ≥ 2, got {}",
                self.neurons
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("head dropout {} outside [0, 1)", self.dropout)));
        }
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need ≥ 2 classes, got {}", self.n_classes)));
        }
        Ok(())
    }

    /// Output widths of the six dense layers.
    pub fn widths(&self) -> [usize; 6] {
        let n = self.neurons;
        [3 * n, n, 2 * n, n, n / 2, self.n_classes]
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig::new(512, 0.1, 3)
    }
}
