use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Examples, Preprocess};
use crate::error::{Error, Result};
use crate::fusion::Prediction;
use crate::model::Model;
use crate::nn::ForwardCtx;
use crate::rng::keyed_rng;
use crate::tensor::Tape;
use crate::vision::AugmentConfig;

use super::optim::{clip_global_norm, Adam, OptimizerSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    pub steps: u64,
    pub stopped_early: bool,
}

#[derive(Clone, Debug)]
pub struct TrainSettings<'a> {
    pub optimizer: &'a OptimizerSpec,
    pub seed: u64,
    pub augment: &'a AugmentConfig,
    pub preprocess: &'a Preprocess<'a>,
}

/// Inference-mode predictions for every example, in order.
pub fn predict_all(model: &Model, ex: &Examples, pre: &Preprocess, batch_size: usize) -> Result<Vec<Prediction>> {
    let rows: Vec<usize> = (0..ex.len()).collect();
    let mut out = Vec::with_capacity(ex.len());
    for chunk in rows.chunks(batch_size.max(1)) {
        out.extend(model.predict(&ex.inputs(chunk, pre, None)?)?);
    }
    Ok(out)
}

/// Mean cross-entropy and accuracy over `ex`.
pub fn loss_and_accuracy(model: &Model, ex: &Examples, pre: &Preprocess, batch_size: usize) -> Result<(f64, f64)> {
    if ex.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    let preds = predict_all(model, ex, pre, batch_size)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, &y) in preds.iter().zip(&ex.labels) {
        loss += p.cross_entropy(y)?;
        correct += usize::from(p.predicted_class == y);
    }
    let n = ex.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch Adam with early stopping on validation loss. The weights of
/// the best-validation epoch are restored before returning.
pub fn train(
    model: &mut Model,
    train_set: &Examples,
    val_set: &Examples,
    settings: &TrainSettings,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    let spec = settings.optimizer;
    spec.validate()?;
    settings.augment.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training and validation splits must be non-empty".into()));
    }
    let pre = settings.preprocess;
    let mut adam = Adam::new(&model.store);
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, crate::params::ParamStore<f32>)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=spec.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut keyed_rng(&[0xE90C, settings.seed, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, rows) in order.chunks(spec.batch_size).enumerate() {
            let step = adam.steps() + 1;
            let inputs = train_set.inputs(rows, pre, Some((settings.augment, settings.seed, epoch as u64)))?;
            let labels: Vec<usize> = rows.iter().map(|&r| train_set.labels[r]).collect();
            let mut tape = Tape::new();
            let bind = model.store.bind(&mut tape);
            let ctx = ForwardCtx::training(settings.seed, step);
            let logits = model.logits(&mut tape, &bind, &inputs, &ctx)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let value = tape.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "training loss became {value} at step {step} (epoch {epoch}, batch {})",
                    b + 1
                )));
            }
            tape.backward(loss)?;
            let mut grads = model.store.gradients(&tape, &bind);
            let norm = match spec.grad_clip {
                Some(c) => clip_global_norm(&mut grads, c),
                None => clip_global_norm(&mut grads, f64::INFINITY),
            };
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "gradient norm became {norm} at step {step} (epoch {epoch}, batch {})",
                    b + 1
                )));
            }
            adam.step(&mut model.store, &grads, spec);
            loss_sum += value * rows.len() as f64;
        }
        let (val_loss, val_acc) = loss_and_accuracy(model, val_set, pre, spec.batch_size.max(64))?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "validation loss became {val_loss} after step {} (epoch {epoch})",
                adam.steps()
            )));
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss,
            val_acc,
        };
        on_epoch(&record);
        history.push(record);

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, epoch, model.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= spec.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (_, best_epoch, store) = best.expect("at least one epoch ran");
    model.store = store;
    Ok(TrainOutcome {
        history,
        best_epoch,
        steps: adam.steps(),
        stopped_early,
    })
}

/// `epoch,train_loss,val_loss,val_acc` with a header row.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_acc\n");
    for r in history {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_acc
        ));
    }
    s
}
