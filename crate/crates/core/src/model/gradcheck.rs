use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TipFormer;
use crate::embedding::SequenceInput;
use crate::error::Result;
use crate::tensor::{Mode, Tape};

#[derive(Clone, Debug)]
pub struct ParamGradReport {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Largest relative error per parameter tensor, in store order.
    pub per_param: Vec<(String, f64)>,
    pub checked: usize,
}

fn loss(model: &TipFormer<f64>, toxin: &SequenceInput, protein: &SequenceInput, label: f64) -> Result<f64> {
    let mut tape = Tape::new(Mode::Eval);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut tape, toxin, protein, &mut rng, false)?;
    let l = tape.bce(out.prob, label)?;
    Ok(tape.value(l).data()[0])
}

/// Central-difference check of `d BCE(p, label) / dθ` for every parameter
/// tensor of an eval-mode model. At most `per_tensor` evenly spaced
/// elements are probed per tensor (all when `None`). Relative error is
/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn param_grad_check(
    model: &TipFormer<f64>,
    toxin: &SequenceInput,
    protein: &SequenceInput,
    label: f64,
    h: f64,
    tol: f64,
    per_tensor: Option<usize>,
) -> Result<ParamGradReport> {
    let mut tape = Tape::new(Mode::Eval);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.forward(&mut tape, toxin, protein, &mut rng, false)?;
    let l = tape.bce(out.prob, label)?;
    let grads = tape.backward(l)?;
    let mut analytic = model.params().clone();
    analytic.zero_grad();
    analytic.accumulate(&grads);

    let mut probe = model.clone();
    let mut report = ParamGradReport { passed: true, max_rel_error: 0.0, per_param: vec![], checked: 0 };
    for id in model.params().ids() {
        let p = analytic.get(id);
        let n = p.value.numel();
        let picks: Vec<usize> = match per_tensor {
            Some(c) if c < n => (0..c).map(|i| i * n / c).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = 0.0f64;
        for i in picks {
            let orig = probe.params().value(id).data()[i];
            probe.params_mut().value_mut(id).data_mut()[i] = orig + h;
            let up = loss(&probe, toxin, protein, label)?;
            probe.params_mut().value_mut(id).data_mut()[i] = orig - h;
            let down = loss(&probe, toxin, protein, label)?;
            probe.params_mut().value_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = p.grad.as_ref().map_or(0.0, |g| g.data()[i]);
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            worst = worst.max(rel);
            report.checked += 1;
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.per_param.push((p.name.clone(), worst));
    }
    report.passed = report.max_rel_error <= tol;
    Ok(report)
}
