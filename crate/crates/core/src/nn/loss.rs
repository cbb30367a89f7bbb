use crate::error::{Error, Result};
use crate::tensor::{Backward, Real, Tape, Tensor, Var};

/// Row-wise softmax of an `N×K` matrix, max-subtracted.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, k] = logits.dims2("softmax")?;
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    Tensor::new(logits.shape(), out)
}

struct SoftmaxCeRule<T: Real> {
    logits: Var,
    probs: Tensor<T>,
    labels: Tensor<T>,
}

impl<T: Real> Backward<T> for SoftmaxCeRule<T> {
    fn backward(&self, _: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let n = T::lit(self.probs.shape()[0] as f64);
        let scale = g.item() / n;
        let d = self
            .probs
            .data()
            .iter()
            .zip(self.labels.data())
            .map(|(&p, &y)| (p - y) * scale)
            .collect();
        Ok(vec![(self.logits, Tensor::new(self.probs.shape(), d)?)])
    }
}

impl<T: Real> Tape<T> {
    /// Mean cross-entropy of `softmax(logits)` against one-hot `labels`.
    /// Returns the scalar loss node and the probabilities.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &Tensor<T>) -> Result<(Var, Tensor<T>)> {
        let [n, k] = self.value(logits).dims2("softmax_cross_entropy")?;
        if k < 2 {
            return Err(Error::shape("softmax_cross_entropy", format!("need ≥ 2 classes, got {k}")));
        }
        if labels.shape() != [n, k] {
            return Err(Error::shape(
                "softmax_cross_entropy",
                format!("labels {:?} for logits {n}×{k}", labels.shape()),
            ));
        }
        for (r, row) in labels.data().chunks(k).enumerate() {
            let ones = row.iter().filter(|&&v| v == T::one()).count();
            let zeros = row.iter().filter(|&&v| v == T::zero()).count();
            if ones != 1 || zeros != k - 1 {
                return Err(Error::Invalid(format!("label row {r} is not one-hot")));
            }
        }
        let lt = self.value(logits);
        let probs = softmax_rows(lt)?;
        let mut total = T::zero();
        for (row, lab) in lt.data().chunks(k).zip(labels.data().chunks(k)) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
            let truth = row.iter().zip(lab).find(|(_, &y)| y == T::one()).map(|(&v, _)| v);
            total = total + lse - truth.expect("validated one-hot");
        }
        let loss = Tensor::scalar(total / T::lit(n as f64));
        let labels = labels.clone();
        let saved = probs.clone();
        let v = self.record("softmax_cross_entropy", loss, &[logits], || {
            Box::new(SoftmaxCeRule {
                logits,
                probs: saved,
                labels,
            })
        })?;
        Ok((v, probs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(rows: &[usize], k: usize) -> Tensor<f64> {
        Tensor::from_fn(&[rows.len(), k], |i| if rows[i / k] == i % k { 1.0 } else { 0.0 })
    }

    #[test]
    fn uniform_logits() {
        let mut tape = Tape::<f64>::new();
        let l = tape.constant(Tensor::zeros(&[1, 3]));
        let (loss, probs) = tape.softmax_cross_entropy(l, &one_hot(&[1], 3)).unwrap();
        for &p in probs.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((tape.value(loss).item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn large_logit_is_stable() {
        let mut tape = Tape::<f32>::new();
        let l = tape.constant(Tensor::new(&[1, 3], vec![1000.0, 0.0, 0.0]).unwrap());
        let labels = Tensor::new(&[1, 3], vec![1.0, 0.0, 0.0]).unwrap();
        let (loss, probs) = tape.softmax_cross_entropy(l, &labels).unwrap();
        assert!(tape.value(loss).item().abs() < 1e-6);
        assert!(probs.all_finite());
    }

    #[test]
    fn rejects_soft_labels() {
        let mut tape = Tape::<f32>::new();
        let l = tape.constant(Tensor::zeros(&[1, 2]));
        let labels = Tensor::new(&[1, 2], vec![0.5, 0.5]).unwrap();
        assert!(tape.softmax_cross_entropy(l, &labels).is_err());
    }

    #[test]
    fn gradient_is_probs_minus_labels_over_n() {
        let mut tape = Tape::<f64>::new();
        let lt = Tensor::new(&[2, 3], vec![0.2, -1.0, 0.7, 1.5, 0.1, -0.3]).unwrap();
        let labels = one_hot(&[2, 0], 3);
        let l = tape.param(lt);
        let (loss, probs) = tape.softmax_cross_entropy(l, &labels).unwrap();
        let g = tape.backward(loss).unwrap();
        for ((&d, &p), &y) in g.get(l).unwrap().data().iter().zip(probs.data()).zip(labels.data()) {
            assert!((d - (p - y) / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rows_sum_to_one_for_large_logits() {
        let lt = Tensor::<f32>::from_fn(&[4, 5], |i| ((i * 7919) % 20001) as f32 - 10000.0);
        let p = softmax_rows(&lt).unwrap();
        for row in p.data().chunks(5) {
            assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
