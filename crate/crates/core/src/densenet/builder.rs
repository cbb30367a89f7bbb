use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{conv_output_size, BatchNormState};
use crate::seed::{self, stream};
use crate::tensor::Tensor;

use super::config::{DenseNetConfig, HeadConfig};
use super::model::{Layer, LayerKind, LayerWeights, ModelMeta, ModelSpec, StageTrace};

/// `U(−b, b)` with `b = sqrt(6 / fan_in)`.
fn he_uniform(shape: &[usize], fan_in: usize, seed: u64) -> Tensor<f32> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let mut rng = seed::rng(seed, &[]);
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound) as f32)
}

/// Appends layers while tracking the per-sample activation shape.
struct Builder {
    layers: Vec<Layer>,
    shape: Vec<usize>,
    seed: u64,
    /// Index of `layers[0]` within the final model.
    offset: usize,
}

impl Builder {
    fn new(input: Vec<usize>, seed: u64, offset: usize) -> Self {
        Builder {
            layers: Vec::new(),
            shape: input,
            seed,
            offset,
        }
    }

    fn next_index(&self) -> usize {
        self.offset + self.layers.len()
    }

    fn layer_seed(&self) -> u64 {
        seed::derive(self.seed, &[stream::INIT, self.next_index() as u64])
    }

    fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape("builder", format!("expected a feature map, have {:?}", self.shape))),
        }
    }

    fn push(&mut self, name: String, kind: LayerKind, weights: LayerWeights, out: Vec<usize>, seed: u64) {
        let in_shape = std::mem::replace(&mut self.shape, out.clone());
        self.layers.push(Layer {
            name,
            kind,
            trainable: true,
            seed,
            in_shape,
            out_shape: out,
            weights,
        });
    }

    fn conv(&mut self, name: String, cout: usize, kernel: usize, stride: usize, pad: usize) -> Result<()> {
        let (cin, h, w) = self.chw()?;
        let (Some(ho), Some(wo)) = (
            conv_output_size(h, kernel, stride, pad),
            conv_output_size(w, kernel, stride, pad),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!("layer {} ({name}): kernel {kernel} does not fit {h}×{w}", self.next_index()),
            ));
        };
        let seed = self.layer_seed();
        let weight = he_uniform(&[cout, cin, kernel, kernel], cin * kernel * kernel, seed);
        let kind = LayerKind::Conv2d {
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            pad,
        };
        self.push(name, kind, LayerWeights::Conv { weight }, vec![cout, ho, wo], seed);
        Ok(())
    }

    fn bn(&mut self, name: String) -> Result<()> {
        let c = self.shape[0];
        let seed = self.layer_seed();
        let out = self.shape.clone();
        self.push(
            name,
            LayerKind::BatchNorm { channels: c },
            LayerWeights::BatchNorm(BatchNormState::new(c)),
            out,
            seed,
        );
        Ok(())
    }

    fn plain(&mut self, name: String, kind: LayerKind, out: Vec<usize>) {
        let seed = self.layer_seed();
        self.push(name, kind, LayerWeights::None, out, seed);
    }

    fn relu(&mut self, name: String) {
        let out = self.shape.clone();
        self.plain(name, LayerKind::Relu, out);
    }

    fn bn_relu(&mut self, prefix: &str) -> Result<()> {
        self.bn(format!("{prefix}.bn"))?;
        self.relu(format!("{prefix}.relu"));
        Ok(())
    }

    /// BN→ReLU→1×1 conv (bottleneck)→BN→ReLU→3×3 conv→concat with the unit
    /// input.
    fn dense_unit(&mut self, prefix: &str, growth: usize, bottleneck: usize) -> Result<()> {
        let start = self.next_index();
        let (c_in, h, w) = self.chw()?;
        self.bn_relu(&format!("{prefix}.1"))?;
        self.conv(format!("{prefix}.1.conv"), bottleneck, 1, 1, 0)?;
        self.bn_relu(&format!("{prefix}.2"))?;
        self.conv(format!("{prefix}.2.conv"), growth, 3, 1, 1)?;
        self.plain(
            format!("{prefix}.concat"),
            LayerKind::Concat { from: start },
            vec![c_in + growth, h, w],
        );
        Ok(())
    }

    fn dense_block(&mut self, prefix: &str, units: usize, growth: usize, bottleneck: usize) -> Result<usize> {
        for u in 0..units {
            self.dense_unit(&format!("{prefix}.unit{}", u + 1), growth, bottleneck)?;
        }
        Ok(self.shape[0])
    }

    /// BN→ReLU→1×1 conv to `floor(θ·c)`→2×2 average pool, stride 2.
    fn transition(&mut self, prefix: &str, compression: f64) -> Result<usize> {
        let (c, h, w) = self.chw()?;
        let c_out = (compression * c as f64).floor() as usize;
        if c_out == 0 {
            return Err(Error::Invalid(format!("{prefix}: θ={compression} compresses {c} channels to 0")));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(
                "transition",
                format!("{prefix}: cannot halve odd spatial size {h}×{w}"),
            ));
        }
        self.bn_relu(prefix)?;
        self.conv(format!("{prefix}.conv"), c_out, 1, 1, 0)?;
        self.plain(
            format!("{prefix}.pool"),
            LayerKind::AvgPool { kernel: 2, stride: 2 },
            vec![c_out, h / 2, w / 2],
        );
        Ok(c_out)
    }

    fn dense(&mut self, name: String, outputs: usize) -> Result<()> {
        let inputs = match self.shape[..] {
            [f] => f,
            _ => return Err(Error::shape("dense", format!("{name} expects flat features, have {:?}", self.shape))),
        };
        let seed = self.layer_seed();
        let weight = he_uniform(&[inputs, outputs], inputs, seed);
        let bias = Tensor::zeros(&[outputs]);
        self.push(
            name,
            LayerKind::Dense { inputs, outputs },
            LayerWeights::Dense { weight, bias },
            vec![outputs],
            seed,
        );
        Ok(())
    }

    fn trace(&self, stage: &str) -> StageTrace {
        StageTrace {
            stage: stage.to_string(),
            channels: self.shape[0],
            height: self.shape.get(1).copied().unwrap_or(1),
            width: self.shape.get(2).copied().unwrap_or(1),
        }
    }

    fn into_spec(self, seed: u64) -> ModelSpec {
        let backbone_len = self.layers.len();
        ModelSpec {
            layers: self.layers,
            meta: ModelMeta {
                backbone: None,
                head: None,
                seed,
                backbone_len,
                trace: Vec::new(),
                class_names: Vec::new(),
            },
        }
    }
}

/// A standalone dense block of `units` bottleneck units with growth rate
/// `growth` on a `[c, h, w]` input. Returns the block and its output
/// channel count `c + units·growth`.
pub fn build_dense_block(input: [usize; 3], units: usize, growth: usize, seed: u64) -> Result<(ModelSpec, usize)> {
    if input.contains(&0) || units == 0 || growth == 0 {
        return Err(Error::Invalid("dense block needs positive channels, units and growth".into()));
    }
    let mut b = Builder::new(input.to_vec(), seed, 0);
    let c_out = b.dense_block("block", units, growth, 4 * growth)?;
    Ok((b.into_spec(seed), c_out))
}

/// A standalone transition on a `[c, h, w]` input. Returns it and
/// `floor(θ·c)`.
pub fn build_transition(input: [usize; 3], compression: f64, seed: u64) -> Result<(ModelSpec, usize)> {
    let mut b = Builder::new(input.to_vec(), seed, 0);
    let c_out = b.transition("transition", compression)?;
    Ok((b.into_spec(seed), c_out))
}

/// Stem, dense blocks with transitions between them, final BN→ReLU and
/// global average pooling.
pub fn build_backbone(config: &DenseNetConfig, seed: u64) -> Result<ModelSpec> {
    config.validate()?;
    let (h, w, c) = config.input_size;
    let mut b = Builder::new(vec![c, h, w], seed, 0);
    let mut trace = vec![b.trace("input")];

    b.conv("stem.conv".into(), config.stem_channels, 7, 2, 3)?;
    b.bn_relu("stem")?;
    trace.push(b.trace("stem_conv"));
    let (sc, sh, sw) = b.chw()?;
    let (Some(ph), Some(pw)) = (conv_output_size(sh, 3, 2, 1), conv_output_size(sw, 3, 2, 1)) else {
        return Err(Error::shape("builder", "stem pool does not fit"));
    };
    b.plain(
        "stem.pool".into(),
        LayerKind::MaxPool { kernel: 3, stride: 2, pad: 1 },
        vec![sc, ph, pw],
    );
    trace.push(b.trace("stem_pool"));

    let n_blocks = config.block_layers.len();
    for (i, &units) in config.block_layers.iter().enumerate() {
        let name = format!("block{}", i + 1);
        b.dense_block(&name, units, config.growth_rate, config.bottleneck_width)?;
        trace.push(b.trace(&name));
        if i + 1 < n_blocks {
            let name = format!("transition{}", i + 1);
            b.transition(&name, config.compression)?;
            trace.push(b.trace(&name));
        }
    }
    b.bn_relu("final")?;
    let out_c = b.shape[0];
    b.plain("gap".into(), LayerKind::GlobalAvgPool, vec![out_c]);

    let mut spec = b.into_spec(seed);
    spec.meta.backbone = Some(config.clone());
    spec.meta.trace = trace;
    Ok(spec)
}

/// Head layers for `c_in` pooled features, indexed from `first_index`.
pub fn build_head(c_in: usize, head: &HeadConfig, first_index: usize, seed: u64) -> Result<Vec<Layer>> {
    head.validate()?;
    let mut b = Builder::new(vec![c_in], seed, first_index);
    let widths = head.widths();
    for (i, &width) in widths[..5].iter().enumerate() {
        let p = format!("head.dense{}", i + 1);
        b.dense(p.clone(), width)?;
        b.relu(format!("{p}.relu"));
        b.plain(format!("{p}.dropout"), LayerKind::Dropout { rate: head.dropout }, vec![width]);
    }
    b.dense("head.logits".into(), widths[5])?;
    Ok(b.layers)
}

pub fn build_model(config: &DenseNetConfig, head: &HeadConfig, seed: u64) -> Result<ModelSpec> {
    let mut model = build_backbone(config, seed)?;
    model.replace_head(head)?;
    Ok(model)
}

impl ModelSpec {
    /// Drops any layers after the backbone and attaches a freshly
    /// initialized head.
    pub fn replace_head(&mut self, head: &HeadConfig) -> Result<()> {
        self.layers.truncate(self.meta.backbone_len);
        let c_in = match self.output_shape() {
            [c] => *c,
            other => return Err(Error::shape("build_head", format!("backbone output {other:?} is not pooled"))),
        };
        let layers = build_head(c_in, head, self.meta.backbone_len, self.meta.seed)?;
        self.layers.extend(layers);
        self.meta.head = Some(head.clone());
        Ok(())
    }

    /// Layers `0..backbone_len`, frozen.
    pub fn freeze_backbone(&mut self) -> Result<()> {
        let n = self.meta.backbone_len;
        super::model::freeze_base(self, 0..n)
    }
}
