//! Mini-batch training with Adam, per-epoch validation, early stopping on
//! validation accuracy, and best-weights restoration.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::dataset::{Dataset, NUM_CHANNELS, TIME_STEPS};
use crate::error::{Error, Result};
use crate::layers::loss::softmax_cross_entropy;
use crate::model::{predict, Network, Trainable};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::util::round_sig6;

/// Sub-stream ids off the user seed, so initialization and the batch
/// schedule never replay each other's draws.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f32,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub dropout: f32,
    pub seed: u64,
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            max_epochs: 300,
            patience: 20,
            batch_size: 64,
            dropout: 0.2,
            seed: 42,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patience < 1 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(
                "batch size must be >= 2 (batch statistics)".into(),
            ));
        }
        if self.max_epochs < 1 {
            return Err(Error::InvalidConfig("max epochs must be >= 1".into()));
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub best_val_acc: f64,
    /// Kept out of the serialized report so reports from identical seeds stay
    /// byte-identical.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// Strict-improvement early stopping: ties do not reset patience.
#[derive(Debug)]
struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epochs_since_best: usize,
}

impl EarlyStopping {
    fn new(patience: usize) -> EarlyStopping {
        EarlyStopping {
            patience,
            best: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_best: 0,
        }
    }

    /// Returns (improved, stop_now).
    fn update(&mut self, epoch: usize, val_acc: f64) -> (bool, bool) {
        let improved = val_acc > self.best;
        if improved {
            self.best = val_acc;
            self.best_epoch = epoch;
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        (improved, self.epochs_since_best >= self.patience)
    }
}

/// Batch tensor `(B, C, T)` plus labels, transposing each window from its
/// stored `(T, F)` layout.
pub fn batch_from_windows(ds: &Dataset, indices: &[usize]) -> (Tensor, Vec<usize>) {
    let b = indices.len();
    let mut x = Tensor::zeros(&[b, NUM_CHANNELS, TIME_STEPS]);
    let mut labels = Vec::with_capacity(b);
    let data = x.data_mut();
    for (row, &idx) in indices.iter().enumerate() {
        let w = &ds.windows[idx];
        let values = w.values.data();
        for t in 0..TIME_STEPS {
            for c in 0..NUM_CHANNELS {
                data[(row * NUM_CHANNELS + c) * TIME_STEPS + t] = values[t * NUM_CHANNELS + c];
            }
        }
        labels.push(w.label);
    }
    (x, labels)
}

/// Fraction of windows whose prediction matches the label, inference mode.
pub fn evaluate_split<M: Network + ?Sized>(model: &M, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::InvalidData("cannot evaluate an empty split".into()));
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(256) {
        let (x, labels) = batch_from_windows(ds, chunk);
        let preds = predict(model, &x)?;
        correct += preds
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

/// Batch index ranges for one epoch. A trailing batch of a single sample is
/// folded into the previous batch.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<(usize, usize)> {
    let mut ranges = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        ranges.push((start, end));
        start = end;
    }
    if ranges.len() >= 2 {
        let (last_start, last_end) = *ranges.last().unwrap();
        if last_end - last_start < 2 {
            ranges.pop();
            ranges.last_mut().unwrap().1 = last_end;
        }
    }
    ranges
}

/// Trains `model`, returning the snapshot with the best validation accuracy
/// (not the final weights) and the per-epoch history.
///
/// Per epoch: shuffle with the seeded rng, iterate batches, forward in
/// training mode, cross-entropy backward, Adam step; then evaluate validation
/// accuracy in inference mode. Stops after `patience` epochs without strict
/// improvement, or at `max_epochs`.
pub fn train<M: Trainable>(
    mut model: M,
    train_split: &Dataset,
    val_split: &Dataset,
    cfg: &TrainConfig,
) -> Result<(M, TrainReport)> {
    cfg.validate()?;
    if train_split.is_empty() || val_split.is_empty() {
        return Err(Error::InvalidData(
            "training and validation splits must be non-empty".into(),
        ));
    }
    if let Some(shared) = train_split
        .subjects()
        .intersection(&val_split.subjects())
        .next()
    {
        return Err(Error::InvalidData(format!(
            "subject {shared} appears in both the training and validation splits"
        )));
    }

    let started = Instant::now();
    let mut rng = Rng::new(cfg.seed).derive(STREAM_TRAIN);
    let names_owned = model.learnable_names();
    let names: Vec<&str> = names_owned.iter().map(String::as_str).collect();
    let mut adam = AdamState::new(cfg.lr, &model.learnables());

    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut best_model = model.clone();
    let mut history = Vec::new();
    let mut stopped_epoch = 0;

    for epoch in 1..=cfg.max_epochs {
        let order = rng.permutation(train_split.len());
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (batch_idx, &(start, end)) in batch_ranges(train_split.len(), cfg.batch_size)
            .iter()
            .enumerate()
        {
            let (x, labels) = batch_from_windows(train_split, &order[start..end]);
            let (logits, cache) = model.forward_train(&x, &mut rng).map_err(|e| {
                Error::TrainingAborted(format!("epoch {epoch}, batch {batch_idx}: {e}"))
            })?;
            let (loss, grad_logits) = softmax_cross_entropy(&logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::TrainingAborted(format!(
                    "epoch {epoch}, batch {batch_idx}: loss is {loss}"
                )));
            }
            loss_sum += loss as f64 * labels.len() as f64;
            for (row, &label) in labels.iter().enumerate() {
                let row_logits =
                    &logits.data()[row * model.num_classes()..(row + 1) * model.num_classes()];
                if crate::model::argmax_lowest(row_logits) == label {
                    correct += 1;
                }
            }
            let grads = model.backward(&cache, &grad_logits)?;
            let grad_refs: Vec<&Tensor> = grads.iter().collect();
            let mut params = model.learnables_mut();
            adam.step(&mut params, &grad_refs, &names).map_err(|e| {
                Error::TrainingAborted(format!("epoch {epoch}, batch {batch_idx}: {e}"))
            })?;
        }

        let train_loss = loss_sum / train_split.len() as f64;
        let train_acc = correct as f64 / train_split.len() as f64;
        let val_acc = evaluate_split(&model, val_split)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_acc,
        });

        let (improved, stop) = stopping.update(epoch, val_acc);
        if improved {
            best_model = model.clone();
        }
        println!(
            "epoch {epoch:>3}/{}: train_loss={train_loss:.4} train_acc={train_acc:.4} val_acc={val_acc:.4}{}",
            cfg.max_epochs,
            if improved { " *" } else { "" }
        );
        stopped_epoch = epoch;
        if stop {
            break;
        }
    }

    let report = TrainReport {
        epochs: history,
        best_epoch: stopping.best_epoch,
        stopped_epoch,
        best_val_acc: stopping.best,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    debug_assert!(report.best_epoch <= report.stopped_epoch);
    Ok((best_model, report))
}

/// Writes the report as JSON with floats rounded to 6 significant digits.
pub fn write_train_report(report: &TrainReport, path: &Path) -> Result<()> {
    let mut rounded = report.clone();
    for e in &mut rounded.epochs {
        e.train_loss = round_sig6(e.train_loss);
        e.train_acc = round_sig6(e.train_acc);
        e.val_acc = round_sig6(e.val_acc);
    }
    rounded.best_val_acc = round_sig6(rounded.best_val_acc);
    let text = serde_json::to_string_pretty(&rounded).expect("report serializes");
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stopping_arithmetic() {
        // improves only at epoch 1, patience 1: stop at epoch 2
        let mut es = EarlyStopping::new(1);
        assert_eq!(es.update(1, 0.5), (true, false));
        assert_eq!(es.update(2, 0.5), (false, true));
        assert_eq!(es.best_epoch, 1);

        // ties never reset patience
        let mut es = EarlyStopping::new(2);
        es.update(1, 0.7);
        assert_eq!(es.update(2, 0.7), (false, false));
        assert_eq!(es.update(3, 0.7), (false, true));
        assert_eq!(es.best_epoch, 1);

        // late improvement resets the counter
        let mut es = EarlyStopping::new(2);
        es.update(1, 0.4);
        es.update(2, 0.3);
        assert_eq!(es.update(3, 0.6), (true, false));
        assert_eq!(es.update(4, 0.1), (false, false));
        assert_eq!(es.update(5, 0.1), (false, true));
        assert_eq!(es.best_epoch, 3);
    }

    #[test]
    fn batch_ranges_fold_singleton_tails() {
        assert_eq!(batch_ranges(10, 4), vec![(0, 4), (4, 8), (8, 10)]);
        assert_eq!(batch_ranges(9, 4), vec![(0, 4), (4, 9)]);
        assert_eq!(batch_ranges(4, 4), vec![(0, 4)]);
        assert_eq!(batch_ranges(5, 4), vec![(0, 5)]);
        assert_eq!(batch_ranges(1, 4), vec![(0, 1)]);
        assert_eq!(batch_ranges(0, 4), Vec::<(usize, usize)>::new());
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for cfg in [
            TrainConfig { patience: 0, ..ok.clone() },
            TrainConfig { batch_size: 1, ..ok.clone() },
            TrainConfig { max_epochs: 0, ..ok.clone() },
            TrainConfig { lr: 0.0, ..ok.clone() },
            TrainConfig { dropout: 1.0, ..ok.clone() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
    }
}
