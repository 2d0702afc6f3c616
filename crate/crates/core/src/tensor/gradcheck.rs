use super::{Mode, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Flat index of the element with the largest relative error.
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the tape gradient of a scalar function against central differences.
///
/// `f` receives a fresh tape in `mode` and the input node and must return a
/// scalar. Train mode is accepted only so that stochastic functions are
/// rejected rather than silently checked.
///
/// Relative error per element is `|a - n| / max(1e-8, |a| + |n|)`.
/// `indices` restricts the check to a subset of elements (all when `None`).
pub fn grad_check<Fun>(
    f: Fun,
    x: &Tensor<f64>,
    mode: Mode,
    h: f64,
    tol: f64,
    indices: Option<&[usize]>,
) -> Result<GradCheckReport>
where
    Fun: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let eval = |input: &Tensor<f64>| -> Result<f64> {
        let mut tape = Tape::new(mode);
        let v = tape.constant(input.clone())?;
        let out = f(&mut tape, v)?;
        if tape.is_stochastic() {
            return Err(Error::usage("grad_check needs a deterministic function (dropout is active)"));
        }
        if tape.value(out).numel() != 1 {
            return Err(Error::usage("grad_check needs a scalar-valued function"));
        }
        Ok(tape.value(out).data()[0])
    };

    let mut tape = Tape::new(mode);
    let xv = tape.leaf(x.clone(), true)?;
    let out = f(&mut tape, xv)?;
    if tape.is_stochastic() {
        return Err(Error::usage("grad_check needs a deterministic function (dropout is active)"));
    }
    let base = tape.value(out).data().first().copied();
    let grads = tape.backward(out)?;
    let analytic = grads.get(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));
    if eval(x)?.to_bits() != base.unwrap_or(f64::NAN).to_bits() {
        return Err(Error::usage("grad_check function is not deterministic"));
    }

    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    let mut report = GradCheckReport { passed: true, max_rel_error: 0.0, worst_index: 0, checked: 0 };
    for &i in idx {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        report.checked += 1;
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
