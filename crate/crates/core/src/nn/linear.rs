use crate::error::{Error, Result};
use crate::tensor::{Backward, Real, Tape, Tensor, Var};

struct BiasRule {
    x: Var,
    b: Var,
}

impl<T: Real> Backward<T> for BiasRule {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let cols = tape.value(self.b).len();
        let mut db = vec![T::zero(); cols];
        for row in g.data().chunks(cols) {
            for (d, &v) in db.iter_mut().zip(row) {
                *d = *d + v;
            }
        }
        Ok(vec![(self.x, g.clone()), (self.b, Tensor::new(&[cols], db)?)])
    }
}

impl<T: Real> Tape<T> {
    /// Adds a length-C bias to every row of an `N×C` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let [_, c] = self.value(x).dims2("add_bias")?;
        if self.value(b).shape() != [c] {
            return Err(Error::shape(
                "add_bias",
                format!("bias {:?} for {c} columns", self.value(b).shape()),
            ));
        }
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias).map(|(&v, &bv)| v + bv))
            .collect();
        let value = Tensor::new(self.value(x).shape(), data)?;
        self.record("add_bias", value, &[x, b], || Box::new(BiasRule { x, b }))
    }

    /// Fully connected layer `x·W + b` with `x: N×Cin`, `W: Cin×Cout`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [_, cin] = self.value(x).dims2("dense")?;
        let [wcin, _] = self.value(w).dims2("dense")?;
        if cin != wcin {
            return Err(Error::shape(
                "dense",
                format!("input has {cin} features, weight expects {wcin}"),
            ));
        }
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }
}
