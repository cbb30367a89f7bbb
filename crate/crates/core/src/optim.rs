//! SGD with momentum, RMSprop and bias-corrected Adam.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
    Rmsprop,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::Adam, OptimizerKind::Sgd, OptimizerKind::Rmsprop];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Rmsprop => "rmsprop",
        }
    }
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            "rmsprop" => Ok(OptimizerKind::Rmsprop),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Update-rule hyperparameters. Fields that do not apply to `kind` are
/// carried but ignored.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub momentum: f32,
    pub rho: f32,
    pub epsilon: f32,
}

impl OptimizerHyper {
    /// lr 1e-3, β1 0.9, β2 0.999, ε 1e-7.
    pub fn adam() -> Self {
        OptimizerHyper {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            momentum: 0.0,
            rho: 0.9,
            epsilon: 1e-7,
        }
    }

    /// lr 1e-2, momentum 0.9.
    pub fn sgd() -> Self {
        OptimizerHyper {
            kind: OptimizerKind::Sgd,
            learning_rate: 1e-2,
            momentum: 0.9,
            ..Self::adam()
        }
    }

    /// lr 1e-3, ρ 0.9, ε 1e-7.
    pub fn rmsprop() -> Self {
        OptimizerHyper {
            kind: OptimizerKind::Rmsprop,
            ..Self::adam()
        }
    }

    pub fn defaults(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => Self::adam(),
            OptimizerKind::Sgd => Self::sgd(),
            OptimizerKind::Rmsprop => Self::rmsprop(),
        }
    }

    pub fn with_lr(mut self, lr: f32) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_momentum(mut self, momentum: f32) -> Self {
        self.momentum = momentum;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let open01 = |v: f32| v > 0.0 && v < 1.0;
        let check = |ok: bool, what: &str, v: f32| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("{} {what} = {v} out of range", self.kind)))
            }
        };
        check(self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate", self.learning_rate)?;
        check(self.epsilon > 0.0, "epsilon", self.epsilon)?;
        match self.kind {
            OptimizerKind::Adam => {
                check(open01(self.beta1), "beta1", self.beta1)?;
                check(open01(self.beta2), "beta2", self.beta2)
            }
            OptimizerKind::Sgd => check((0.0..1.0).contains(&self.momentum), "momentum", self.momentum),
            OptimizerKind::Rmsprop => check(open01(self.rho), "rho", self.rho),
        }
    }
}

/// Moment buffers for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub enum Moments {
    Adam { m: Tensor<f32>, v: Tensor<f32> },
    Sgd { velocity: Tensor<f32> },
    Rmsprop { square_avg: Tensor<f32> },
}

impl Moments {
    fn zeros(kind: OptimizerKind, shape: &[usize]) -> Self {
        match kind {
            OptimizerKind::Adam => Moments::Adam {
                m: Tensor::zeros(shape),
                v: Tensor::zeros(shape),
            },
            OptimizerKind::Sgd => Moments::Sgd {
                velocity: Tensor::zeros(shape),
            },
            OptimizerKind::Rmsprop => Moments::Rmsprop {
                square_avg: Tensor::zeros(shape),
            },
        }
    }

    fn buffers(&self) -> Vec<&Tensor<f32>> {
        match self {
            Moments::Adam { m, v } => vec![m, v],
            Moments::Sgd { velocity } => vec![velocity],
            Moments::Rmsprop { square_avg } => vec![square_avg],
        }
    }

    fn shape(&self) -> &[usize] {
        self.buffers()[0].shape()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    /// Steps taken so far.
    pub t: u64,
    pub moments: Vec<Moments>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    pub hyper: OptimizerHyper,
    pub state: OptimizerState,
}

impl Optimizer {
    /// Zeroed buffers for parameters of the given shapes.
    pub fn new(hyper: OptimizerHyper, shapes: &[Vec<usize>]) -> Result<Self> {
        hyper.validate()?;
        if shapes.is_empty() {
            return Err(Error::Invalid("optimizer needs at least one parameter".into()));
        }
        Ok(Optimizer {
            hyper,
            state: OptimizerState {
                t: 0,
                moments: shapes.iter().map(|s| Moments::zeros(hyper.kind, s)).collect(),
            },
        })
    }

    /// One update of every parameter from its gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor<f32>], grads: &[&Tensor<f32>]) -> Result<()> {
        if params.len() != self.state.moments.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "optimizer step",
                format!(
                    "{} params, {} grads, {} buffers",
                    params.len(),
                    grads.len(),
                    self.state.moments.len()
                ),
            ));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.state.moments[i].shape() {
                return Err(Error::shape(
                    "optimizer step",
                    format!("param {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.state.t += 1;
        let h = self.hyper;
        let lr = h.learning_rate;
        let t = self.state.t as i32;
        for ((p, g), mom) in params.iter_mut().zip(grads).zip(&mut self.state.moments) {
            let g = g.data();
            match mom {
                Moments::Sgd { velocity } => {
                    for ((p, v), &g) in p.data_mut().iter_mut().zip(velocity.data_mut()).zip(g) {
                        *v = h.momentum * *v + g;
                        *p -= lr * *v;
                    }
                }
                Moments::Rmsprop { square_avg } => {
                    for ((p, s), &g) in p.data_mut().iter_mut().zip(square_avg.data_mut()).zip(g) {
                        *s = h.rho * *s + (1.0 - h.rho) * g * g;
                        *p -= lr * g / (s.sqrt() + h.epsilon);
                    }
                }
                Moments::Adam { m, v } => {
                    let c1 = 1.0 - h.beta1.powi(t);
                    let c2 = 1.0 - h.beta2.powi(t);
                    for (((p, m), v), &g) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g) {
                        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
                        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *p -= lr * m_hat / (v_hat.sqrt() + h.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}

const STATE_MAGIC: &[u8; 4] = b"DGO1";

#[derive(Serialize, Deserialize)]
struct StateHeader {
    format: String,
    hyper: OptimizerHyper,
    t: u64,
    shapes: Vec<Vec<usize>>,
}

impl Optimizer {
    /// Serializes hyperparameters, step count and buffers (magic `DGO1`,
    /// same container layout as model files).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = StateHeader {
            format: "leafnet-optimizer".into(),
            hyper: self.hyper,
            t: self.state.t,
            shapes: self.state.moments.iter().map(|m| m.shape().to_vec()).collect(),
        };
        let header = serde_json::to_string(&header).map_err(|e| Error::Header(e.to_string()))?;
        let data: Vec<&[f32]> = self
            .state
            .moments
            .iter()
            .flat_map(|m| m.buffers())
            .map(|t| t.data())
            .collect();
        Ok(container::encode(STATE_MAGIC, &header, &data))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let parse = |h: &str| -> Result<StateHeader> {
            serde_json::from_str(h).map_err(|e| Error::Header(e.to_string()))
        };
        let per_param = |k: OptimizerKind| if k == OptimizerKind::Adam { 2 } else { 1 };
        let decoded = container::decode(bytes, STATE_MAGIC, "DGO1 optimizer state", |h| {
            let hd = parse(h)?;
            Ok(hd.shapes.iter().map(|s| s.iter().product::<usize>()).sum::<usize>() * per_param(hd.hyper.kind))
        })?;
        let hd = parse(decoded.header)?;
        let mut opt = Optimizer::new(hd.hyper, &hd.shapes)?;
        opt.state.t = hd.t;
        let values = decoded.floats();
        let mut off = 0;
        for m in &mut opt.state.moments {
            let bufs: Vec<&mut Tensor<f32>> = match m {
                Moments::Adam { m, v } => vec![m, v],
                Moments::Sgd { velocity } => vec![velocity],
                Moments::Rmsprop { square_avg } => vec![square_avg],
            };
            for b in bufs {
                let n = b.len();
                b.data_mut().copy_from_slice(&values[off..off + n]);
                off += n;
            }
        }
        Ok(opt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> Tensor<f32> {
        Tensor::from_vec(vec![v])
    }

    #[test]
    fn init_state_is_zero() {
        let opt = Optimizer::new(OptimizerHyper::adam(), &[vec![2, 3], vec![4]]).unwrap();
        assert_eq!(opt.state.t, 0);
        for (m, shape) in opt.state.moments.iter().zip([vec![2, 3], vec![4]]) {
            let Moments::Adam { m, v } = m else { panic!() };
            assert_eq!(m.shape(), &shape[..]);
            assert!(m.data().iter().chain(v.data()).all(|&x| x == 0.0));
        }
        let sgd = Optimizer::new(OptimizerHyper::sgd().with_momentum(0.0), &[vec![3]]).unwrap();
        assert!(matches!(&sgd.state.moments[0], Moments::Sgd { velocity } if velocity.data() == [0.0; 3]));
    }

    #[test]
    fn invalid_hyper_rejected() {
        assert!(Optimizer::new(OptimizerHyper::adam().with_lr(-1.0), &[vec![1]]).is_err());
        let mut h = OptimizerHyper::adam();
        h.beta2 = 1.0;
        assert!(h.validate().is_err());
        let mut h = OptimizerHyper::rmsprop();
        h.rho = 0.0;
        assert!(h.validate().is_err());
        assert!(Optimizer::new(OptimizerHyper::sgd(), &[]).is_err());
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        for kind in OptimizerKind::ALL {
            let mut opt = Optimizer::new(OptimizerHyper::defaults(kind), &[vec![3]]).unwrap();
            let mut p = Tensor::from_vec(vec![1.0, -2.0, 0.5]);
            let before = p.clone();
            let g = Tensor::zeros(&[3]);
            for _ in 0..5 {
                opt.step(&mut [&mut p], &[&g]).unwrap();
            }
            assert_eq!(p, before, "{kind}");
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerHyper::adam(), &[vec![4]]).unwrap();
        let mut p = Tensor::zeros(&[4]);
        let g = Tensor::from_vec(vec![0.3, -2.0, 1e-2, 50.0]);
        opt.step(&mut [&mut p], &[&g]).unwrap();
        for (&d, &gv) in p.data().iter().zip(g.data()) {
            assert!((d.abs() - 1e-3).abs() < 1e-5, "{d}");
            assert_eq!(d.signum(), -gv.signum());
        }
    }

    #[test]
    fn adam_first_step_is_scale_invariant() {
        let step = |g: f32| {
            let mut opt = Optimizer::new(OptimizerHyper::adam(), &[vec![1]]).unwrap();
            let mut p = scalar_param(0.0);
            opt.step(&mut [&mut p], &[&scalar_param(g)]).unwrap();
            p.data()[0]
        };
        for g in [1e-3f32, 0.05, 1.0, 20.0] {
            let (a, b) = (step(g), step(10.0 * g));
            assert!(((a - b) / a).abs() < 1e-2, "g={g}: {a} vs {b}");
        }
    }

    #[test]
    fn rmsprop_square_average_stays_nonnegative() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut opt = Optimizer::new(OptimizerHyper::rmsprop(), &[vec![8]]).unwrap();
        let mut p = Tensor::zeros(&[8]);
        for _ in 0..200 {
            let g = Tensor::from_fn(&[8], |_| rng.gen_range(-1e3f32..1e3));
            opt.step(&mut [&mut p], &[&g]).unwrap();
            let Moments::Rmsprop { square_avg } = &opt.state.moments[0] else { panic!() };
            assert!(square_avg.data().iter().all(|&s| s >= 0.0));
        }
    }

    #[test]
    fn sgd_without_momentum_is_plain_descent() {
        let mut opt = Optimizer::new(OptimizerHyper::sgd().with_momentum(0.0), &[vec![3]]).unwrap();
        let mut p = Tensor::from_vec(vec![1.0f32, 2.0, 3.0]);
        let mut q = p.clone();
        for step in 0..10 {
            let g = Tensor::from_vec(vec![0.1 * step as f32, -0.7, 1.3]);
            opt.step(&mut [&mut p], &[&g]).unwrap();
            for (q, &g) in q.data_mut().iter_mut().zip(g.data()) {
                *q -= 1e-2 * g;
            }
            assert_eq!(p, q);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut opt = Optimizer::new(OptimizerHyper::adam(), &[vec![2]]).unwrap();
        let mut p = Tensor::zeros(&[2]);
        let g = Tensor::zeros(&[3]);
        assert!(opt.step(&mut [&mut p], &[&g]).is_err());
    }

    #[test]
    fn quadratic_converges_at_tuned_lr() {
        // adam and rmsprop move ~lr per step, so their defaults cannot cover
        // a distance of 3 in 500 steps; at lr = 0.1 all three converge.
        for kind in OptimizerKind::ALL {
            let lr = if kind == OptimizerKind::Sgd { 1e-2 } else { 0.1 };
            let mut opt = Optimizer::new(OptimizerHyper::defaults(kind).with_lr(lr), &[vec![1]]).unwrap();
            let mut x = scalar_param(0.0);
            for _ in 0..500 {
                let g = Tensor::from_vec(vec![2.0 * (x.data()[0] - 3.0)]);
                opt.step(&mut [&mut x], &[&g]).unwrap();
            }
            assert!((x.data()[0] - 3.0).abs() < 1e-3, "{kind}: {}", x.data()[0]);
        }
    }

    #[test]
    fn state_roundtrip() {
        let mut opt = Optimizer::new(OptimizerHyper::adam(), &[vec![2], vec![1, 3]]).unwrap();
        let mut a = Tensor::zeros(&[2]);
        let mut b = Tensor::zeros(&[1, 3]);
        let ga = Tensor::from_vec(vec![0.5, -0.25]);
        let gb = Tensor::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        opt.step(&mut [&mut a, &mut b], &[&ga, &gb]).unwrap();
        let back = Optimizer::from_bytes(&opt.to_bytes().unwrap()).unwrap();
        assert_eq!(back, opt);
    }
}
