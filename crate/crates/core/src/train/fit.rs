use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bce_loss, BestMeta, Checkpoint, Optimizer, RngState, TrainConfig};
use crate::embedding::Example;
use crate::error::{Error, Result};
use crate::model::TipFormer;
use crate::parallel::par_map;
use crate::tensor::{Mode, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct FitResult {
    /// Minimum-validation-loss model with its optimizer state.
    pub best: Checkpoint,
    /// Weights after the last epoch run.
    pub last: TipFormer,
    pub log: Vec<EpochLog>,
}

/// Eval-mode probabilities, in input order.
pub fn score_examples(model: &TipFormer, examples: &[Example<'_>]) -> Result<Vec<f64>> {
    par_map(examples, |e| model.predict(e.toxin, e.protein)).into_iter().collect()
}

/// Mean eval-mode BCE over `examples`.
pub fn validation_loss(model: &TipFormer, examples: &[Example<'_>]) -> Result<f64> {
    let probs = score_examples(model, examples)?;
    let total: f64 = probs.iter().zip(examples).map(|(&p, e)| bce_loss(p, e.label as f64)).sum();
    Ok(total / examples.len() as f64)
}

fn diagnose(model: &TipFormer, epoch: usize, step: usize, e: &Example<'_>, cause: &Error) -> Error {
    let worst = model
        .params()
        .iter()
        .map(|p| (p.name.as_str(), p.value.data().iter().fold(0.0f32, |a, v| a.max(v.abs()))))
        .fold(("", 0.0f32), |a, b| if b.1 > a.1 || b.1.is_nan() { b } else { a });
    Error::Numeric(format!(
        "epoch {epoch}, step {step}, pair ({}, {}): {cause}; largest |weight| {} in {}",
        e.toxin_id, e.protein_id, worst.1, worst.0
    ))
}

/// Trains with batch size 1 and keeps the minimum-validation-loss weights.
///
/// Each epoch shuffles `train` with the seeded RNG (which also drives
/// dropout), runs forward/BCE/backward/RAdam/LookAhead per pair, then
/// scores `val` in eval mode. Stops after `patience` epochs without a new
/// minimum or at `max_epochs`. `on_epoch` sees every log line as it is produced.
pub fn fit(
    mut model: TipFormer,
    train: &[Example<'_>],
    val: &[Example<'_>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::usage("training needs non-empty train and validation partitions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut opt = Optimizer::new(cfg, model.params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut since_best = 0;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let e = &train[i];
            let mut tape = Tape::new(Mode::Train);
            let grads = model
                .forward(&mut tape, e.toxin, e.protein, &mut rng, false)
                .and_then(|out| tape.bce(out.prob, e.label as f64))
                .and_then(|loss| {
                    total += tape.value(loss).data()[0] as f64;
                    tape.backward(loss)
                })
                .map_err(|err| match err {
                    Error::Numeric(_) => diagnose(&model, epoch, step, e, &err),
                    other => other,
                })?;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate(&grads);
            opt.step(params)?;
        }
        let train_loss = total / train.len() as f64;
        let val_loss = validation_loss(&model, val)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Numeric(format!("epoch {epoch}: train loss {train_loss}, val loss {val_loss}")));
        }
        let entry = EpochLog { epoch, train_loss, val_loss, seconds: start.elapsed().as_secs_f64() };
        on_epoch(&entry);
        log.push(entry);

        if best.as_ref().map_or(true, |b| val_loss < b.best.val_loss) {
            best = Some(Checkpoint {
                model: model.clone(),
                train: cfg.clone(),
                rng: RngState::capture(&rng),
                best: BestMeta { epoch, val_loss, train_loss },
                optimizer: Some(opt.clone()),
            });
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(FitResult { best: best.expect("at least one epoch"), last: model, log })
}

/// `epoch  train_loss  val_loss  seconds`, tab-separated with a header row.
pub fn write_epoch_log(log: &[EpochLog], out: &mut dyn Write) -> Result<()> {
    writeln!(out, "epoch\ttrain_loss\tval_loss\tseconds")?;
    for e in log {
        writeln!(out, "{}\t{}\t{}\t{:.3}", e.epoch, e.train_loss, e.val_loss, e.seconds)?;
    }
    Ok(())
}
