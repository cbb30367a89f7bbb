use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Backward, Real, Tape, Tensor, Var};

use super::conv::conv_output_size;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

struct MaxPoolRule {
    x: Var,
    /// Flat input index of each output's maximum.
    argmax: Vec<usize>,
}

impl<T: Real> Backward<T> for MaxPoolRule {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let shape = tape.value(self.x).shape();
        let mut dx = vec![T::zero(); tape.value(self.x).len()];
        for (&src, &gv) in self.argmax.iter().zip(g.data()) {
            dx[src] = dx[src] + gv;
        }
        Ok(vec![(self.x, Tensor::new(shape, dx)?)])
    }
}

#[derive(Clone, Copy)]
struct Window {
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Window {
    /// In-bounds input coordinates covered by output (oy, ox).
    fn taps(&self, oy: usize, ox: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (y0, x0) = (oy * self.stride, ox * self.stride);
        (0..self.k).flat_map(move |i| {
            (0..self.k).filter_map(move |j| {
                let iy = (y0 + i).checked_sub(self.pad)?;
                let ix = (x0 + j).checked_sub(self.pad)?;
                (iy < self.h && ix < self.w).then_some((iy, ix))
            })
        })
    }
}

struct AvgPoolRule {
    x: Var,
    win: Window,
}

impl<T: Real> Backward<T> for AvgPoolRule {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let xt = tape.value(self.x);
        let win = self.win;
        let planes = xt.shape()[0] * xt.shape()[1];
        let area = T::lit((win.k * win.k) as f64);
        let mut dx = vec![T::zero(); xt.len()];
        for p in 0..planes {
            for oy in 0..win.ho {
                for ox in 0..win.wo {
                    let gv = g.data()[(p * win.ho + oy) * win.wo + ox] / area;
                    for (iy, ix) in win.taps(oy, ox) {
                        let i = (p * win.h + iy) * win.w + ix;
                        dx[i] = dx[i] + gv;
                    }
                }
            }
        }
        Ok(vec![(self.x, Tensor::new(xt.shape(), dx)?)])
    }
}

struct GapRule {
    x: Var,
}

impl<T: Real> Backward<T> for GapRule {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let xt = tape.value(self.x);
        let area = xt.shape()[2] * xt.shape()[3];
        let scale = T::one() / T::lit(area as f64);
        let dx = (0..xt.len()).map(|i| g.data()[i / area] * scale).collect();
        Ok(vec![(self.x, Tensor::new(xt.shape(), dx)?)])
    }
}

impl<T: Real> Tape<T> {
    /// Windowed max/mean pooling over `N×C×H×W`. Max pooling ignores padded
    /// positions; average pooling counts them as zeros (divides by k²).
    pub fn pool2d(&mut self, x: Var, kind: PoolKind, k: usize, stride: usize, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("pool2d")?;
        if pad >= k.max(1) {
            return Err(Error::shape("pool2d", format!("pad {pad} must be smaller than window {k}")));
        }
        let (Some(ho), Some(wo)) = (
            conv_output_size(h, k, stride, pad),
            conv_output_size(w, k, stride, pad),
        ) else {
            return Err(Error::shape(
                "pool2d",
                format!("window {k} stride {stride} pad {pad} exceeds {h}×{w}"),
            ));
        };
        let win = Window { k, stride, pad, h, w, ho, wo };
        let xs = self.value(x).data();
        let planes = n * c;
        let mut out = Vec::with_capacity(planes * ho * wo);
        match kind {
            PoolKind::Max => {
                let mut argmax = Vec::with_capacity(out.capacity());
                for p in 0..planes {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut best = (usize::MAX, T::neg_infinity());
                            for (iy, ix) in win.taps(oy, ox) {
                                let i = (p * h + iy) * w + ix;
                                if best.0 == usize::MAX || xs[i] > best.1 {
                                    best = (i, xs[i]);
                                }
                            }
                            argmax.push(best.0);
                            out.push(best.1);
                        }
                    }
                }
                let value = Tensor::new(&[n, c, ho, wo], out)?;
                self.record("pool2d", value, &[x], || Box::new(MaxPoolRule { x, argmax }))
            }
            PoolKind::Avg => {
                let area = T::lit((k * k) as f64);
                for p in 0..planes {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let s: T = win.taps(oy, ox).map(|(iy, ix)| xs[(p * h + iy) * w + ix]).sum();
                            out.push(s / area);
                        }
                    }
                }
                let value = Tensor::new(&[n, c, ho, wo], out)?;
                self.record("pool2d", value, &[x], || Box::new(AvgPoolRule { x, win }))
            }
        }
    }

    /// Spatial mean per channel: `N×C×H×W → N×C`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4("global_avg_pool")?;
        let area = h * w;
        let denom = T::lit(area as f64);
        let xs = self.value(x).data();
        let out = (0..n * c)
            .map(|p| xs[p * area..(p + 1) * area].iter().copied().sum::<T>() / denom)
            .collect();
        let value = Tensor::new(&[n, c], out)?;
        self.record("global_avg_pool", value, &[x], || Box::new(GapRule { x }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stem_maxpool_shape() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 64, 112, 112]));
        let y = tape.pool2d(x, PoolKind::Max, 3, 2, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 64, 56, 56]);
    }

    #[test]
    fn avg_of_2x2_block() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.pool2d(x, PoolKind::Avg, 2, 2, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[2.5]);
    }

    #[test]
    fn max_of_constant_is_constant() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[2, 3, 6, 6], -0.75));
        let y = tape.pool2d(x, PoolKind::Max, 3, 2, 1).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == -0.75));
    }

    #[test]
    fn oversized_window_is_rejected() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(tape.pool2d(x, PoolKind::Avg, 3, 1, 0).is_err());
    }

    #[test]
    fn gap_of_constant() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::full(&[1, 1920, 7, 7], 2.5));
        let y = tape.global_avg_pool(x).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1920]);
        assert!(tape.value(y).data().iter().all(|&v| (v - 2.5).abs() < 1e-6));
    }

    #[test]
    fn gap_gradient_is_uniform() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::from_fn(&[2, 3, 4, 5], |i| i as f64));
        let y = tape.global_avg_pool(x).unwrap();
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| (v - 1.0 / 20.0).abs() < 1e-15));
    }
}
