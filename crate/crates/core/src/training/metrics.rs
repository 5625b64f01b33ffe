use serde::{Deserialize, Serialize};

use super::loss::{check_labels, log_softmax_row};
use crate::data::EEGTrialSet;
use crate::error::{Error, Result};
use crate::model::STMambaNet;
use crate::tensor::Float;

/// Classification report. Accuracies are percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    /// Classes without trials report 0.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// Mean cross-entropy, when logits were available.
    pub loss: Option<f64>,
}

impl Metrics {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::arg("metrics", "empty evaluation set"));
        }
        check_labels("metrics", labels, predictions.len(), n_classes)?;
        if let Some(&p) = predictions.iter().find(|&&p| p >= n_classes) {
            return Err(Error::arg("metrics", format!("prediction {p} out of range for {n_classes} classes")));
        }
        let mut confusion = vec![vec![0; n_classes]; n_classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            confusion[y][p] += 1;
        }
        let correct: usize = (0..n_classes).map(|k| confusion[k][k]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let total: usize = row.iter().sum();
                if total == 0 { 0.0 } else { 100.0 * row[k] as f64 / total as f64 }
            })
            .collect();
        Ok(Self { accuracy: 100.0 * correct as f64 / labels.len() as f64, per_class_accuracy, confusion, loss: None })
    }

    pub fn correct(&self) -> usize {
        (0..self.confusion.len()).map(|k| self.confusion[k][k]).sum()
    }

    pub fn total(&self) -> usize {
        self.confusion.iter().flatten().sum()
    }
}

/// Infer-mode evaluation of `model` on `set`, `batch` trials at a time.
pub fn evaluate<T: Float>(model: &mut STMambaNet<T>, set: &EEGTrialSet, batch: usize) -> Result<Metrics> {
    if set.is_empty() {
        return Err(Error::arg("evaluate", "empty evaluation set"));
    }
    let cfg = &model.cfg;
    if set.n_channels() != cfg.n_channels || set.n_samples() != cfg.n_samples || set.n_classes != cfg.n_classes {
        return Err(Error::shape(
            "evaluate",
            format!(
                "set has {} channels x {} samples, {} classes; model expects {} x {}, {}",
                set.n_channels(),
                set.n_samples(),
                set.n_classes,
                cfg.n_channels,
                cfg.n_samples,
                cfg.n_classes
            ),
        ));
    }
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut predictions = Vec::with_capacity(set.len());
    let mut loss = 0.0;
    for chunk in indices.chunks(batch.max(1)) {
        let logits = model.logits(&set.batch(chunk))?;
        let k = logits.n_classes();
        for (row, &i) in logits.values.data().chunks_exact(k).zip(chunk) {
            loss -= log_softmax_row(row)[set.labels[i]];
        }
        predictions.extend(logits.predictions());
    }
    let mut m = Metrics::from_predictions(&predictions, &set.labels, set.n_classes)?;
    m.loss = Some(loss / set.len() as f64);
    Ok(m)
}
