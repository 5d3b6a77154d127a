//! Minibatch SGD with global-norm clipping and the two-rate step decay:
//! after each epoch the learning rate is multiplied by `epoch_decay`, or by
//! `val_drop_decay` instead when validation accuracy fell strictly below the
//! previous epoch's.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

use super::model::Workspace;
use super::params::{Gradients, Model};

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epoch_decay: f64,
    pub val_drop_decay: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.1,
            epoch_decay: 0.99,
            val_drop_decay: 0.2,
            clip_norm: 5.0,
            max_epochs: 20,
            seed: 0,
            batch_size: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::invalid("lr0 must be positive"));
        }
        if !(self.epoch_decay > 0.0 && self.epoch_decay <= 1.0) {
            return Err(Error::invalid("epoch_decay must lie in (0, 1]"));
        }
        if !(self.val_drop_decay > 0.0 && self.val_drop_decay < 1.0) {
            return Err(Error::invalid("val_drop_decay must lie in (0, 1)"));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("max_epochs and batch_size must be positive"));
        }
        Ok(())
    }
}

/// Learning-rate state between epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSchedule {
    lr: f64,
    epoch_decay: f64,
    val_drop_decay: f64,
    prev_val: Option<f64>,
}

impl LrSchedule {
    pub fn new(tc: &TrainConfig) -> Self {
        LrSchedule {
            lr: tc.lr0,
            epoch_decay: tc.epoch_decay,
            val_drop_decay: tc.val_drop_decay,
            prev_val: None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Applies the end-of-epoch update and returns whether validation dropped.
    /// Only a strict decrease counts as a drop, and a drop replaces the
    /// per-epoch decay rather than compounding with it.
    pub fn end_epoch(&mut self, val_accuracy: f64) -> bool {
        let dropped = self.prev_val.is_some_and(|prev| val_accuracy < prev);
        self.lr *= if dropped {
            self.val_drop_decay
        } else {
            self.epoch_decay
        };
        self.prev_val = Some(val_accuracy);
        dropped
    }
}

/// Rescales `grads` so their global L2 norm is at most `clip_norm`. Returns
/// the norm before clipping.
pub fn clip_gradients(grads: &mut Gradients, clip_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > clip_norm {
        grads.scale(clip_norm / norm);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    /// A loss or parameter became non-finite; training stopped early.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub eta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub test_accuracy: f64,
    pub status: RunStatus,
}

impl TrainRecord {
    pub fn learning_rates(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.learning_rate).collect()
    }

    pub fn write_epochs_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.epochs {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io("<epochs csv>", e))?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "seed": self.seed,
            "epochs_run": self.epochs.len(),
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
            "test_accuracy": self.test_accuracy,
            "status": self.status,
        })
    }
}

pub fn evaluate_accuracy(model: &Model, examples: &[Example], ws: &mut Workspace) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty split"));
    }
    let mut correct = 0usize;
    for chunk in examples.chunks(EVAL_BATCH) {
        let preds = model.predict(chunk, ws)?;
        correct += preds
            .iter()
            .zip(chunk)
            .filter(|(&p, ex)| p == ex.label.index())
            .count();
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Trains `model` in place and leaves it holding the parameters of the epoch
/// with the best validation accuracy (earliest epoch on ties).
pub fn train(model: &mut Model, dataset: &Dataset, tc: &TrainConfig) -> Result<TrainRecord> {
    tc.validate()?;
    dataset.validate()?;
    if dataset.vocab_size > model.encoder.vocab_size {
        return Err(Error::invalid(format!(
            "dataset vocabulary {} exceeds model vocabulary {}",
            dataset.vocab_size, model.encoder.vocab_size
        )));
    }

    let mut rng = seeded(derive_seed(&[tc.seed, SHUFFLE_STREAM]));
    let mut order: Vec<usize> = (0..dataset.train.len()).collect();
    let mut schedule = LrSchedule::new(tc);
    let mut ws = Workspace::new();
    let mut grads = Gradients::zeros_like(model);
    let mut epochs = Vec::with_capacity(tc.max_epochs);
    let mut best: Option<(f64, usize, Model)> = None;
    let mut status = RunStatus::Completed;

    for epoch in 1..=tc.max_epochs {
        let lr = schedule.lr();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;

        for idx in order.chunks(tc.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &dataset.train[i]).collect();
            let loss = model.backward_into(&batch, &mut ws, &mut grads)?;
            if !loss.is_finite() {
                status = RunStatus::Diverged;
                break;
            }
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
            correct += ws
                .probabilities()
                .chunks_exact(3)
                .zip(&batch)
                .filter(|(p, ex)| argmax3(p) == ex.label.index())
                .count();
            clip_gradients(&mut grads, tc.clip_norm);
            model.sgd_step(&grads, lr);
            if !model.is_finite() {
                status = RunStatus::Diverged;
                break;
            }
        }

        let val_accuracy = evaluate_accuracy(model, &dataset.val, &mut ws)?;
        let (train_loss, train_accuracy) = if seen > 0 {
            (loss_sum / seen as f64, correct as f64 / seen as f64)
        } else {
            (f64::NAN, 0.0)
        };
        epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_loss,
            train_accuracy,
            val_accuracy,
            eta: model.eta(),
        });
        if status == RunStatus::Diverged {
            break;
        }
        if best.as_ref().is_none_or(|(acc, _, _)| val_accuracy > *acc) {
            best = Some((val_accuracy, epoch, model.clone()));
        }
        schedule.end_epoch(val_accuracy);
    }

    let (best_val_accuracy, best_epoch) = match best {
        Some((acc, epoch, snapshot)) => {
            *model = snapshot;
            (acc, epoch)
        }
        // Diverged inside the first epoch: no finite snapshot exists.
        None => (epochs[0].val_accuracy, 0),
    };
    let test_accuracy = evaluate_accuracy(model, &dataset.test, &mut ws)?;

    Ok(TrainRecord {
        seed: tc.seed,
        epochs,
        best_epoch,
        best_val_accuracy,
        test_accuracy,
        status,
    })
}

fn argmax3(p: &[f64]) -> usize {
    let mut best = 0;
    for c in 1..p.len() {
        if p[c] > p[best] {
            best = c;
        }
    }
    best
}
