//! Primitive differentiable ops: elementwise arithmetic, matmul, reshape,
//! reductions and channel concatenation.

use crate::error::{Error, Result};

use super::kernels::{matmul_into, transpose};
use super::tape::{Backward, Tape, Var};
use super::{Real, Tensor};

#[derive(Clone, Copy)]
enum Elementwise {
    Add,
    Sub,
    Mul,
}

struct ElementwiseRule {
    kind: Elementwise,
    a: Var,
    b: Var,
}

impl<T: Real> Backward<T> for ElementwiseRule {
    fn backward(&self, tape: &Tape<T>, _out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        Ok(match self.kind {
            Elementwise::Add => vec![(self.a, g.clone()), (self.b, g.clone())],
            Elementwise::Sub => vec![(self.a, g.clone()), (self.b, g.map(|v| -v))],
            Elementwise::Mul => {
                let a = tape.value(self.a);
                let b = tape.value(self.b);
                let ga = zip_map(g, b, |g, b| g * b);
                let gb = zip_map(g, a, |g, a| g * a);
                vec![(self.a, ga), (self.b, gb)]
            }
        })
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("operands share a shape")
}

struct ScalarMulRule<T> {
    x: Var,
    k: T,
}

impl<T: Real> Backward<T> for ScalarMulRule<T> {
    fn backward(&self, _: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let k = self.k;
        Ok(vec![(self.x, g.map(|v| v * k))])
    }
}

struct MatMulRule {
    a: Var,
    b: Var,
}

impl<T: Real> Backward<T> for MatMulRule {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let a = tape.value(self.a);
        let b = tape.value(self.b);
        let [m, k] = a.dims2("matmul")?;
        let n = b.shape()[1];
        let mut out = Vec::with_capacity(2);
        if tape.requires_grad(self.a) {
            // dA = G · Bᵀ
            let bt = transpose(b.data(), k, n);
            let mut ga = vec![T::zero(); m * k];
            matmul_into(g.data(), &bt, m, n, k, &mut ga);
            out.push((self.a, Tensor::new(&[m, k], ga)?));
        }
        if tape.requires_grad(self.b) {
            // dB = Aᵀ · G
            let at = transpose(a.data(), m, k);
            let mut gb = vec![T::zero(); k * n];
            matmul_into(&at, g.data(), k, m, n, &mut gb);
            out.push((self.b, Tensor::new(&[k, n], gb)?));
        }
        Ok(out)
    }
}

struct ReshapeRule {
    x: Var,
}

impl<T: Real> Backward<T> for ReshapeRule {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        Ok(vec![(self.x, g.reshape(tape.value(self.x).shape())?)])
    }
}

struct ReduceRule {
    x: Var,
    mean: bool,
}

impl<T: Real> Backward<T> for ReduceRule {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let shape = tape.value(self.x).shape();
        let n: usize = shape.iter().product();
        let mut v = g.item();
        if self.mean {
            v = v / T::lit(n as f64);
        }
        Ok(vec![(self.x, Tensor::full(shape, v))])
    }
}

/// Channel-axis bookkeeping for `N×C×…` tensors: `outer` = N, `inner` =
/// product of the trailing axes.
fn channel_layout(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let inner = shape[2..].iter().product();
    (n, c, inner)
}

struct ConcatRule {
    parts: Vec<(Var, usize)>,
}

impl<T: Real> Backward<T> for ConcatRule {
    fn backward(&self, tape: &Tape<T>, out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let (n, c_total, inner) = channel_layout(out.shape());
        let mut grads = Vec::with_capacity(self.parts.len());
        let mut offset = 0;
        for &(v, c) in &self.parts {
            if tape.requires_grad(v) {
                let sliced = slice_channels_raw(g.data(), n, c_total, inner, offset, c);
                grads.push((v, Tensor::new(tape.value(v).shape(), sliced)?));
            }
            offset += c;
        }
        Ok(grads)
    }
}

fn slice_channels_raw<T: Real>(
    data: &[T],
    n: usize,
    c_total: usize,
    inner: usize,
    start: usize,
    len: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(n * len * inner);
    for b in 0..n {
        let base = (b * c_total + start) * inner;
        out.extend_from_slice(&data[base..base + len * inner]);
    }
    out
}

struct SliceRule {
    x: Var,
    start: usize,
}

impl<T: Real> Backward<T> for SliceRule {
    fn backward(&self, tape: &Tape<T>, out: &Tensor<T>, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let x = tape.value(self.x);
        let (n, c_total, inner) = channel_layout(x.shape());
        let len = out.shape()[1];
        let mut gx = vec![T::zero(); x.len()];
        for b in 0..n {
            let dst = (b * c_total + self.start) * inner;
            let src = b * len * inner;
            gx[dst..dst + len * inner].copy_from_slice(&g.data()[src..src + len * inner]);
        }
        Ok(vec![(self.x, Tensor::new(x.shape(), gx)?)])
    }
}

impl<T: Real> Tape<T> {
    fn elementwise(&mut self, kind: Elementwise, op: &'static str, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let value = match kind {
            Elementwise::Add => zip_map(av, bv, |x, y| x + y),
            Elementwise::Sub => zip_map(av, bv, |x, y| x - y),
            Elementwise::Mul => zip_map(av, bv, |x, y| x * y),
        };
        self.record(op, value, &[a, b], || Box::new(ElementwiseRule { kind, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Add, "add", a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Sub, "sub", a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(Elementwise::Mul, "mul_elementwise", a, b)
    }

    pub fn scalar_mul(&mut self, x: Var, k: T) -> Result<Var> {
        let value = self.value(x).map(|v| v * k);
        self.record("scalar_mul", value, &[x], || Box::new(ScalarMulRule { x, k }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.value(a).dims2("matmul")?;
        let [k2, n] = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner dims differ: {m}×{k} · {k2}×{n}"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let value = Tensor::new(&[m, n], out)?;
        self.record("matmul", value, &[a, b], || Box::new(MatMulRule { a, b }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape).map_err(|_| {
            Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.value(x).shape()),
            )
        })?;
        self.record("reshape", value, &[x], || Box::new(ReshapeRule { x }))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().copied().sum::<T>();
        self.record("reduce_sum", Tensor::scalar(s), &[x], || {
            Box::new(ReduceRule { x, mean: false })
        })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::lit(t.len() as f64);
        self.record("reduce_mean", Tensor::scalar(s), &[x], || {
            Box::new(ReduceRule { x, mean: true })
        })
    }

    /// Concatenates `N×Cᵢ×…` tensors along the channel axis.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let ref_shape = self.value(*first).shape().to_vec();
        if ref_shape.len() < 2 {
            return Err(Error::shape(
                "concat_channels",
                format!("inputs need a channel axis, got {ref_shape:?}"),
            ));
        }
        let mut parts = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != ref_shape.len() || s[0] != ref_shape[0] || s[2..] != ref_shape[2..] {
                return Err(Error::shape(
                    "concat_channels",
                    format!("{s:?} does not match {ref_shape:?} off the channel axis"),
                ));
            }
            parts.push((v, s[1]));
        }
        let c_total: usize = parts.iter().map(|p| p.1).sum();
        let n = ref_shape[0];
        let inner: usize = ref_shape[2..].iter().product();
        let mut data = Vec::with_capacity(n * c_total * inner);
        for b in 0..n {
            for &(v, c) in &parts {
                let src = self.value(v).data();
                data.extend_from_slice(&src[b * c * inner..(b + 1) * c * inner]);
            }
        }
        let mut shape = ref_shape;
        shape[1] = c_total;
        let value = Tensor::new(&shape, data)?;
        self.record("concat_channels", value, inputs, || Box::new(ConcatRule { parts }))
    }

    /// Channels `start..start + len` of an `N×C×…` tensor.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        if shape.len() < 2 || len == 0 || start + len > shape[1] {
            return Err(Error::shape(
                "slice_channels",
                format!("channels {start}..{} of {shape:?}", start + len),
            ));
        }
        let (n, c_total, inner) = channel_layout(&shape);
        let data = slice_channels_raw(self.value(x).data(), n, c_total, inner, start, len);
        let mut out_shape = shape;
        out_shape[1] = len;
        let value = Tensor::new(&out_shape, data)?;
        self.record("slice_channels", value, &[x], || Box::new(SliceRule { x, start }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn add_elementwise() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[3.0, 4.0]));
        let c = tape.add(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_shape_mismatch_names_dims() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f32>::zeros(&[2]));
        let b = tape.constant(Tensor::<f32>::zeros(&[3]));
        let err = tape.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn matmul_ones() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f32>::ones(&[2, 3]));
        let b = tape.constant(Tensor::<f32>::ones(&[3, 2]));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2]);
        assert!(tape.value(c).data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn matmul_inner_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f32>::ones(&[2, 3]));
        let b = tape.constant(Tensor::<f32>::ones(&[2, 2]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { op: "matmul", .. })));
    }

    #[test]
    fn concat_channel_arithmetic() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f32>::zeros(&[2, 4, 3, 3]));
        let b = tape.constant(Tensor::<f32>::ones(&[2, 8, 3, 3]));
        let c = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 12, 3, 3]);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::<f32>::zeros(&[1, 4, 3, 3]));
        let b = tape.constant(Tensor::<f32>::zeros(&[1, 4, 2, 3]));
        assert!(tape.concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn overflow_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[1], &[f32::MAX]));
        let err = tape.add(a, a).unwrap_err();
        assert!(matches!(err, Error::NonFinite { op: "add" }));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[3], &[0.5, -1.0, 2.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum(sq).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn unreachable_param_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let y = tape.param(t(&[3], &[1.0, 2.0, 3.0]));
        let s = tape.sum(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(y).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_detached() {
        let mut tape = Tape::new();
        let x = tape.param(t(&[2], &[1.0, 2.0]));
        let y = tape.scalar_mul(x, 2.0).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Backward(_))));
        let c = tape.constant(t(&[2], &[1.0, 2.0]));
        let s = tape.sum(c).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Backward(_))));
        assert!(tape.backward(Var(999)).is_err());
    }

    #[test]
    fn constants_do_not_record_rules() {
        let mut tape = Tape::new();
        let c = tape.constant(t(&[2], &[1.0, 2.0]));
        let d = tape.scalar_mul(c, 3.0).unwrap();
        assert!(!tape.requires_grad(d));
        assert_eq!(tape.value(d).data(), &[3.0, 6.0]);
    }
}
