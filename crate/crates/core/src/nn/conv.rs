use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{matmul_into, transpose, Backward, Real, Tape, Tensor, Var};

/// `floor((size + 2·pad − kernel) / stride) + 1`, or `None` when the window
/// does not fit the padded input.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if kernel == 0 || stride == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Input pixel feeding output (oy, ox) through kernel tap (ki, kj).
    #[inline]
    fn source(&self, oy: usize, ox: usize, ki: usize, kj: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ki).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kj).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

/// Unfolds one `C×H×W` sample into a `(C·kh·kw)×(Ho·Wo)` column matrix.
fn im2col<T: Real>(g: &Geometry, x: &[T]) -> Vec<T> {
    let p = g.positions();
    let mut cols = vec![T::zero(); g.patch() * p];
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((iy, ix)) = g.source(oy, ox, ki, kj) {
                            cols[row + oy * g.wo + ox] = plane[iy * g.w + ix];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto a `C×H×W` sample.
fn col2im<T: Real>(g: &Geometry, cols: &[T]) -> Vec<T> {
    let p = g.positions();
    let mut x = vec![T::zero(); g.cin * g.h * g.w];
    for c in 0..g.cin {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((c * g.kh + ki) * g.kw + kj) * p;
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        if let Some((iy, ix)) = g.source(oy, ox, ki, kj) {
                            let dst = c * g.h * g.w + iy * g.w + ix;
                            x[dst] = x[dst] + cols[row + oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

struct ConvRule {
    x: Var,
    w: Var,
    geom: Geometry,
}

impl<T: Real> Backward<T> for ConvRule {
    fn backward(&self, tape: &Tape<T>, _: &Tensor<T>, grad: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let g = self.geom;
        let x = tape.value(self.x).data();
        let w = tape.value(self.w).data();
        let need_x = tape.requires_grad(self.x);
        let need_w = tape.requires_grad(self.w);
        let (k, p) = (g.patch(), g.positions());
        let wt = if need_x { transpose(w, g.cout, k) } else { Vec::new() };
        let in_len = g.cin * g.h * g.w;
        let out_len = g.cout * p;

        let per_sample = par::map_range(g.n, g.n * g.cout * k * p * 2, |b| {
            let gy = &grad.data()[b * out_len..(b + 1) * out_len];
            let dw = need_w.then(|| {
                let cols_t = transpose(&im2col(&g, &x[b * in_len..(b + 1) * in_len]), k, p);
                let mut dw = vec![T::zero(); g.cout * k];
                matmul_into(gy, &cols_t, g.cout, p, k, &mut dw);
                dw
            });
            let dx = need_x.then(|| {
                let mut dcols = vec![T::zero(); k * p];
                matmul_into(&wt, gy, k, g.cout, p, &mut dcols);
                col2im(&g, &dcols)
            });
            (dw, dx)
        });

        let mut out = Vec::with_capacity(2);
        if need_w {
            let mut dw = vec![T::zero(); g.cout * k];
            for (part, _) in &per_sample {
                for (a, b) in dw.iter_mut().zip(part.as_ref().expect("computed")) {
                    *a = *a + *b;
                }
            }
            out.push((self.w, Tensor::new(tape.value(self.w).shape(), dw)?));
        }
        if need_x {
            let mut dx = Vec::with_capacity(g.n * in_len);
            for (_, part) in per_sample {
                dx.extend(part.expect("computed"));
            }
            out.push((self.x, Tensor::new(tape.value(self.x).shape(), dx)?));
        }
        Ok(out)
    }
}

impl<T: Real> Tape<T> {
    /// Bias-free 2-D convolution with zero padding, via im2col + matmul.
    /// `x: N×Cin×H×W`, `w: Cout×Cin×kh×kw`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let [n, cin, h, wd] = self.value(x).dims4("conv2d")?;
        let [cout, wcin, kh, kw] = self.value(w).dims4("conv2d")?;
        if cin != wcin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, kernel expects {wcin}"),
            ));
        }
        let (Some(ho), Some(wo)) = (
            conv_output_size(h, kh, stride, pad),
            conv_output_size(wd, kw, stride, pad),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}×{kw} stride {stride} pad {pad} does not fit {h}×{wd}"),
            ));
        };
        let geom = Geometry {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let xs = self.value(x).data();
        let ws = self.value(w).data();
        let (k, p) = (geom.patch(), geom.positions());
        let in_len = cin * h * wd;
        let per_sample = par::map_range(n, n * cout * k * p, |b| {
            let cols = im2col(&geom, &xs[b * in_len..(b + 1) * in_len]);
            let mut y = vec![T::zero(); cout * p];
            matmul_into(ws, &cols, cout, k, p, &mut y);
            y
        });
        let value = Tensor::new(&[n, cout, ho, wo], per_sample.concat())?;
        self.record("conv2d", value, &[x, w], || Box::new(ConvRule { x, w, geom }))
    }
}
