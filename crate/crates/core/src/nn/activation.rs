use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Backward, Real, Tape, Tensor, Var};

use super::Mode;

struct ReluRule {
    x: Var,
}

impl<T: Real> Backward<T> for ReluRule {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let x = tape.value(self.x);
        // subgradient at exactly 0 is 0
        let dx = x
            .data()
            .iter()
            .zip(g.data())
            .map(|(&xv, &gv)| if xv > T::zero() { gv } else { T::zero() })
            .collect();
        Ok(vec![(self.x, Tensor::new(x.shape(), dx)?)])
    }
}

/// Dropout rate and mode. Rates in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub rate: f32,
    pub mode: Mode,
}

impl DropoutSpec {
    pub fn new(rate: f32, mode: Mode) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(DropoutSpec { rate, mode })
    }

    /// Whether this spec changes its input at all.
    pub fn is_active(&self) -> bool {
        self.mode == Mode::Train && self.rate > 0.0
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `rate`,
/// otherwise `1 / (1 − rate)`.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(rate: f32, len: usize, rng: &mut R) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - f64::from(rate)));
    (0..len)
        .map(|_| {
            if rng.gen::<f64>() < f64::from(rate) {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

struct MaskRule<T> {
    x: Var,
    mask: Vec<T>,
}

impl<T: Real> Backward<T> for MaskRule<T> {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let dx = g.data().iter().zip(&self.mask).map(|(&a, &m)| a * m).collect();
        Ok(vec![(self.x, Tensor::new(tape.value(self.x).shape(), dx)?)])
    }
}

impl<T: Real> Tape<T> {
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.record("relu", value, &[x], || Box::new(ReluRule { x }))
    }

    /// Multiplies `x` by a precomputed mask (see [`dropout_mask`]).
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(Error::shape(
                "dropout",
                format!("mask of {} for {} elements", mask.len(), self.value(x).len()),
            ));
        }
        let xt = self.value(x);
        let data = xt.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let value = Tensor::new(xt.shape(), data)?;
        self.record("dropout", value, &[x], || Box::new(MaskRule { x, mask }))
    }

    /// Inverted dropout drawing its mask from `rng`; identity in eval mode
    /// or at rate 0 (no randomness consumed then).
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, spec: DropoutSpec, rng: &mut R) -> Result<Var> {
        DropoutSpec::new(spec.rate, spec.mode)?;
        if !spec.is_active() {
            return Ok(x);
        }
        let mask = dropout_mask(spec.rate, self.value(x).len(), rng);
        self.dropout_with_mask(x, mask)
    }
}
