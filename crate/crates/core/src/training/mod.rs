//! Loss, optimizer, epoch loop with early stopping, and evaluation.

mod adamw;
mod loss;
mod metrics;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adamw::{AdamW, AdamWConfig};
pub use loss::log_softmax_row;
pub use metrics::{evaluate, Metrics};

use crate::data::{augment_recombine, EEGTrialSet, N_SEGMENTS};
use crate::error::{Error, Result};
use crate::model::STMambaNet;
use crate::tensor::{Float, Graph, Mode};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Artificial trials per real trial, regenerated every epoch.
    pub augment_multiplier: usize,
    pub n_segments: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 9e-4,
            weight_decay: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
            max_epochs: 2000,
            patience: 200,
            batch_size: 64,
            seed: 0,
            augment_multiplier: 1,
            n_segments: N_SEGMENTS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::Config("weight decay must be >= 0 and eps > 0".into()));
        }
        if !(0.0..1.0).contains(&self.betas.0) || !(0.0..1.0).contains(&self.betas.1) {
            return Err(Error::Config(format!("betas must lie in [0, 1), got {:?}", self.betas)));
        }
        if self.max_epochs == 0 || self.batch_size == 0 || self.n_segments == 0 {
            return Err(Error::Config("max_epochs, batch_size and n_segments must be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { lr: self.lr, weight_decay: self.weight_decay, betas: self.betas, eps: self.eps }
    }
}

/// Seed for the augmentation, shuffling and dropout of one epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub lr: f64,
    pub seconds: f64,
    pub improved: bool,
    /// Epochs since the last improvement, counted after this epoch.
    pub epochs_without_improvement: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    Diverged { epoch: usize, detail: String },
}

pub struct TrainOutcome<T: Float> {
    /// Snapshot with the best validation record (the initial model if
    /// training diverged before any epoch completed).
    pub model: STMambaNet<T>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl<T: Float> TrainOutcome<T> {
    pub fn diverged(&self) -> bool {
        matches!(self.stop, StopReason::Diverged { .. })
    }
}

/// Writes `history` as JSON lines.
pub fn write_history<W: Write>(history: &[EpochRecord], out: &mut W) -> Result<()> {
    for rec in history {
        serde_json::to_writer(&mut *out, rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn is_improvement(acc: f64, loss: f64, best: Option<(f64, f64)>) -> bool {
    match best {
        None => true,
        Some((best_acc, best_loss)) => acc > best_acc || (acc == best_acc && loss < best_loss),
    }
}

struct EpochStats {
    loss: f64,
    acc: f64,
}

fn train_epoch<T: Float>(
    model: &mut STMambaNet<T>,
    opt: &mut AdamW<T>,
    train: &EEGTrialSet,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    let seed = epoch_seed(cfg.seed, epoch);
    let data = if cfg.augment_multiplier > 0 {
        augment_recombine(train, cfg.n_segments, cfg.augment_multiplier, seed)?
    } else {
        train.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let (mut loss_sum, mut correct, mut seen) = (0.0, 0, 0);
    for batch in order.chunks(cfg.batch_size) {
        if batch.len() < 2 {
            continue;
        }
        let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
        let mut g = Graph::new();
        let x = g.input(data.batch(batch));
        let logits = model.forward(&mut g, x, Mode::Train, &mut rng)?;
        let preds = crate::model::Logits { values: g.value(logits).clone() }.predictions();
        let loss = g.cross_entropy(logits, &labels)?;
        let lv = g.value(loss).data()[0].as_f64();
        let grads = g.backward(loss)?;
        opt.step(&mut model.store, &grads)?;
        loss_sum += lv * batch.len() as f64;
        correct += preds.iter().zip(&labels).filter(|(p, y)| p == y).count();
        seen += batch.len();
    }
    if seen == 0 {
        return Err(Error::arg("train", "no minibatch with at least 2 trials"));
    }
    if !loss_sum.is_finite() {
        return Err(Error::NonFinite { op: "cross_entropy" });
    }
    Ok(EpochStats { loss: loss_sum / seen as f64, acc: 100.0 * correct as f64 / seen as f64 })
}

/// Trains `model` on `train`, monitoring `val` after every epoch.
///
/// An epoch improves on the best so far when its validation accuracy is
/// higher, or equal with a lower validation loss. Epoch 1 always improves.
/// Training stops after the epoch at which `patience` consecutive epochs
/// have passed without improvement, so a model that never changes stops at
/// epoch `patience + 1`. The returned model is the best snapshot.
///
/// Non-finite values or gradients end training with
/// [`StopReason::Diverged`] and the last good snapshot; other errors are
/// returned as is.
pub fn train_loop<T: Float>(
    mut model: STMambaNet<T>,
    train: &EEGTrialSet,
    val: &EEGTrialSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "empty split: {} training and {} validation trials",
            train.len(),
            val.len()
        )));
    }
    let mut opt = AdamW::new(&model.store, cfg.optimizer());
    let mut best: Option<(f64, f64)> = None;
    let mut best_epoch = 0;
    let mut snapshot = model.clone();
    let mut history = Vec::new();
    let mut stale = 0;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        let start = Instant::now();
        let result = train_epoch(&mut model, &mut opt, train, cfg, epoch)
            .and_then(|stats| Ok((stats, evaluate(&mut model, val, cfg.batch_size)?)));
        let (stats, metrics) = match result {
            Ok(v) => v,
            Err(e) if e.kind() == crate::error::ErrorKind::Numerical => {
                log::warn!("epoch {epoch}: {e}; keeping the snapshot from epoch {best_epoch}");
                stop = StopReason::Diverged { epoch, detail: e.to_string() };
                break;
            }
            Err(e) => return Err(e),
        };
        let val_loss = metrics.loss.unwrap_or(f64::NAN);
        if !val_loss.is_finite() {
            stop = StopReason::Diverged { epoch, detail: "validation loss is not finite".into() };
            break;
        }
        let improved = is_improvement(metrics.accuracy, val_loss, best);
        if improved {
            best = Some((metrics.accuracy, val_loss));
            best_epoch = epoch;
            snapshot = model.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        let rec = EpochRecord {
            epoch,
            train_loss: stats.loss,
            train_acc: stats.acc,
            val_loss,
            val_acc: metrics.accuracy,
            lr: cfg.lr,
            seconds: start.elapsed().as_secs_f64(),
            improved,
            epochs_without_improvement: stale,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.1}%, val loss {:.4} acc {:.1}%{}",
            rec.train_loss,
            rec.train_acc,
            rec.val_loss,
            rec.val_acc,
            if improved { " *" } else { "" }
        );
        on_epoch(&rec);
        history.push(rec);
        if !improved && stale >= cfg.patience {
            stop = StopReason::EarlyStopping;
            break;
        }
    }
    let (best_val_acc, best_val_loss) = best.unwrap_or((f64::NAN, f64::NAN));
    Ok(TrainOutcome { model: snapshot, best_epoch, best_val_acc, best_val_loss, history, stop })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_rule() {
        assert!(is_improvement(50.0, 1.0, None));
        assert!(is_improvement(51.0, 9.0, Some((50.0, 1.0))));
        assert!(is_improvement(50.0, 0.9, Some((50.0, 1.0))));
        assert!(!is_improvement(50.0, 1.0, Some((50.0, 1.0))));
        assert!(!is_improvement(49.0, 0.1, Some((50.0, 1.0))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { patience: 3000, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: 0.0, ..Default::default() }.validate().is_ok());
    }

    #[test]
    fn epoch_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|e| epoch_seed(7, e)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(epoch_seed(1, 1), epoch_seed(2, 1));
    }

    #[test]
    fn history_is_json_lines() {
        let rec = EpochRecord {
            epoch: 1,
            train_loss: 1.0,
            train_acc: 50.0,
            val_loss: 1.1,
            val_acc: 40.0,
            lr: 9e-4,
            seconds: 0.5,
            improved: true,
            epochs_without_improvement: 0,
        };
        let mut buf = Vec::new();
        write_history(&[rec.clone(), rec.clone()], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let back: EpochRecord = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(back, rec);
    }
}
