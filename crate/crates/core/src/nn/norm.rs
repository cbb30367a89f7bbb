use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Backward, Real, Tape, Tensor, Var};

pub const BN_EPSILON: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Per-channel batch-norm parameters and running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState {
    pub gamma: Tensor<f32>,
    pub beta: Tensor<f32>,
    pub running_mean: Tensor<f32>,
    pub running_var: Tensor<f32>,
    pub momentum: f32,
    pub epsilon: f32,
}

/// Statistics of one training batch, per channel. `var` is the unbiased
/// estimate that feeds the running average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BatchNormState {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update_running(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for (r, &b) in self.running_mean.data_mut().iter_mut().zip(&stats.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, &b) in self.running_var.data_mut().iter_mut().zip(&stats.var) {
            *r = ((1.0 - m) * *r + m * b).max(0.0);
        }
    }
}

/// `(N, C, S)` where S is the product of the axes after the channel.
fn layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape("batch_norm", format!("need N×C×…, got {shape:?}")));
    }
    Ok((shape[0], shape[1], shape[2..].iter().product()))
}

struct BatchNormRule<T> {
    x: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
}

impl<T: Real> Backward<T> for BatchNormRule<T> {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let x = tape.value(self.x);
        let (n, c, s) = layout(x.shape())?;
        let gamma = tape.value(self.gamma).data();
        let m = T::lit((n * s) as f64);
        let gd = g.data();

        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    sum_g[ch] = sum_g[ch] + gd[i];
                    sum_gx[ch] = sum_gx[ch] + gd[i] * self.xhat[i];
                }
            }
        }

        let mut out = Vec::with_capacity(3);
        if tape.requires_grad(self.x) {
            let mut dx = vec![T::zero(); x.len()];
            for b in 0..n {
                for ch in 0..c {
                    let base = (b * c + ch) * s;
                    let k = gamma[ch] * self.inv_std[ch];
                    for i in base..base + s {
                        dx[i] = if self.train {
                            k / m * (m * gd[i] - sum_g[ch] - self.xhat[i] * sum_gx[ch])
                        } else {
                            k * gd[i]
                        };
                    }
                }
            }
            out.push((self.x, Tensor::new(x.shape(), dx)?));
        }
        out.push((self.gamma, Tensor::new(&[c], sum_gx)?));
        out.push((self.beta, Tensor::new(&[c], sum_g)?));
        Ok(out)
    }
}

impl<T: Real> Tape<T> {
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        inv_std: Vec<T>,
        train: bool,
    ) -> Result<Var> {
        let xt = self.value(x);
        let (n, c, s) = layout(xt.shape())?;
        let (gm, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xt.len()];
        let mut y = vec![T::zero(); xt.len()];
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * s;
                for i in base..base + s {
                    xhat[i] = (xt.data()[i] - mean[ch]) * inv_std[ch];
                    y[i] = gm[ch] * xhat[i] + bt[ch];
                }
            }
        }
        let value = Tensor::new(xt.shape(), y)?;
        self.record("batch_norm", value, &[x, gamma, beta], || {
            Box::new(BatchNormRule {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            })
        })
    }

    fn bn_check(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let (n, c, s) = layout(self.value(x).shape())?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(Error::shape(
                    "batch_norm",
                    format!("parameter {:?} for {c} channels", self.value(p).shape()),
                ));
            }
        }
        Ok((n, c, s))
    }

    /// Normalizes with the batch's own per-channel statistics over (N, H, W).
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: T,
    ) -> Result<(Var, BatchStats)> {
        let (n, c, s) = self.bn_check(x, gamma, beta)?;
        let count = n * s;
        if count < 2 {
            return Err(Error::Invalid(format!(
                "batch_norm in train mode needs at least 2 values per channel, got {count}"
            )));
        }
        let data = self.value(x).data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let vals = (0..n).flat_map(|b| {
                let base = (b * c + ch) * s;
                data[base..base + s].iter().copied()
            });
            let mu = vals.clone().sum::<T>() / T::lit(count as f64);
            let v = vals.map(|v| (v - mu) * (v - mu)).sum::<T>() / T::lit(count as f64);
            mean[ch] = mu;
            var[ch] = v;
        }
        let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let unbias = count as f64 / (count - 1) as f64;
        let stats = BatchStats {
            mean: mean.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            var: var
                .iter()
                .map(|v| (v.to_f64().unwrap_or(f64::NAN) * unbias) as f32)
                .collect(),
        };
        let y = self.bn_apply(x, gamma, beta, &mean, inv_std, true)?;
        Ok((y, stats))
    }

    /// Normalizes with fixed (running) statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c, _) = self.bn_check(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape("batch_norm", "running statistics length"));
        }
        let inv_std = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, running_mean, inv_std, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tensor<f32> {
        Tensor::from_fn(&[3, 2, 4, 4], |i| ((i * 37 % 17) as f32) * 0.3 - 1.7 + (i % 2) as f32 * 4.0)
    }

    #[test]
    fn train_mode_normalizes_each_channel() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(sample());
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let (y, _) = tape.batch_norm_train(x, g, b, BN_EPSILON).unwrap();
        let y = tape.value(y);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|n| y.data()[(n * 2 + ch) * 16..(n * 2 + ch + 1) * 16].to_vec())
                .map(f64::from)
                .collect();
            let mu = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mu.abs() < 1e-4, "mean {mu}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn eval_mode_with_identity_stats() {
        let xt = sample();
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(xt.clone());
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        let y = tape
            .batch_norm_eval(x, g, b, &[0.0, 0.0], &[1.0, 1.0], BN_EPSILON)
            .unwrap();
        let scale = 1.0 / (1.0f32 + BN_EPSILON).sqrt();
        for (a, b) in tape.value(y).data().iter().zip(xt.data()) {
            assert!((a - b * scale).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    #[test]
    fn single_value_per_channel_rejected_in_train_mode() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::ones(&[1, 2, 1, 1]));
        let g = tape.constant(Tensor::ones(&[2]));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(tape.batch_norm_train(x, g, b, BN_EPSILON).is_err());
    }

    #[test]
    fn running_stats_ema() {
        let mut st = BatchNormState::new(2);
        st.update_running(&BatchStats {
            mean: vec![1.0, -2.0],
            var: vec![3.0, 0.5],
        });
        assert_eq!(st.running_mean.data(), &[0.1, -0.2]);
        assert!((st.running_var.data()[0] - 1.2).abs() < 1e-6);
        assert!((st.running_var.data()[1] - 0.95).abs() < 1e-6);
    }
}
