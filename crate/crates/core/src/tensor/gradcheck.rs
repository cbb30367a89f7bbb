//! Central-difference gradient checker.

use crate::error::{Error, Result};

use super::{Real, Tape, Tensor, Var};

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// max over checked coordinates of
    /// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub excluded: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Configurable checker. `exclude(i)` marks coordinates that sit next to a
/// kink of a piecewise-linear op; they are skipped and counted.
pub struct GradCheck<'a> {
    pub eps: f64,
    pub tol: f64,
    exclude: Option<Box<dyn Fn(usize) -> bool + 'a>>,
}

impl<'a> GradCheck<'a> {
    pub fn new(eps: f64, tol: f64) -> Self {
        GradCheck { eps, tol, exclude: None }
    }

    pub fn exclude(mut self, f: impl Fn(usize) -> bool + 'a) -> Self {
        self.exclude = Some(Box::new(f));
        self
    }

    /// Checks `f` (which must build a scalar from its input var) at `x`.
    pub fn run<T, F>(&self, f: F, x: &Tensor<T>) -> Result<GradCheckReport>
    where
        T: Real,
        F: Fn(&mut Tape<T>, Var) -> Result<Var>,
    {
        let analytic = {
            let mut tape = Tape::new();
            let xv = tape.param(x.clone());
            let y = f(&mut tape, xv)?;
            let grads = tape.backward(y)?;
            grads
                .get(xv)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(x.shape()))
        };

        let eval = |probe: Tensor<T>| -> Result<f64> {
            let mut tape = Tape::new();
            let xv = tape.constant(probe);
            let y = f(&mut tape, xv)?;
            let v = tape.value(y);
            if !v.is_scalar() {
                return Err(Error::Invalid("grad_check: f must be scalar-valued".into()));
            }
            let v = v.item().to_f64().unwrap_or(f64::NAN);
            if !v.is_finite() {
                return Err(Error::NonFinite { op: "grad_check probe" });
            }
            Ok(v)
        };

        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            worst_index: None,
            checked: 0,
            excluded: 0,
            tol: self.tol,
        };
        let eps = T::lit(self.eps);
        for i in 0..x.len() {
            if self.exclude.as_ref().is_some_and(|ex| ex(i)) {
                report.excluded += 1;
                continue;
            }
            let mut plus = x.clone();
            let mut minus = x.clone();
            plus.data_mut()[i] = x.data()[i] + eps;
            minus.data_mut()[i] = x.data()[i] - eps;
            // the step actually taken after rounding to the element type
            let step = (plus.data()[i] - minus.data()[i]).to_f64().unwrap_or(f64::NAN);
            let numeric = (eval(plus)? - eval(minus)?) / step;
            let a = analytic.data()[i].to_f64().unwrap_or(f64::NAN);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_index.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst_index = Some(i);
            }
        }
        Ok(report)
    }
}

/// [`GradCheck`] without exclusions.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, eps: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Real,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    GradCheck::new(eps, tol).run(f, x)
}
