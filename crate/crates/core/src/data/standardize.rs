use serde::{Deserialize, Serialize};

use super::EEGTrialSet;
use crate::error::{Error, Result};

/// Smallest standard deviation used when scaling a channel.
pub const STD_FLOOR: f64 = 1e-6;

/// Per-channel moments of a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Population mean and standard deviation of each channel over all
    /// trials and samples.
    pub fn fit(set: &EEGTrialSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::arg("standardize", "training set is empty"));
        }
        let (c, l) = (set.n_channels(), set.n_samples());
        let count = (set.len() * l) as f64;
        let mut mean = vec![0.0; c];
        for i in 0..set.len() {
            for (ch, row) in set.trial(i).chunks_exact(l).enumerate() {
                mean[ch] += row.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for i in 0..set.len() {
            for (ch, row) in set.trial(i).chunks_exact(l).enumerate() {
                var[ch] += row.iter().map(|&v| (v as f64 - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt()).collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, set: &EEGTrialSet) -> Result<EEGTrialSet> {
        let (c, l) = (set.n_channels(), set.n_samples());
        if c != self.mean.len() {
            return Err(Error::shape("standardize", format!("{c} channels, stats for {}", self.mean.len())));
        }
        let mut out = set.clone();
        for trial in out.trials.data_mut().chunks_exact_mut(c * l) {
            for (ch, row) in trial.chunks_exact_mut(l).enumerate() {
                let (m, s) = (self.mean[ch], self.std[ch].max(STD_FLOOR));
                row.iter_mut().for_each(|v| *v = ((*v as f64 - m) / s) as f32);
            }
        }
        Ok(out)
    }
}

/// Fits channel statistics on `train` and applies them to `train` and
/// every set in `others`.
pub fn standardize(train: &EEGTrialSet, others: &[&EEGTrialSet]) -> Result<(EEGTrialSet, Vec<EEGTrialSet>, ChannelStats)> {
    let stats = ChannelStats::fit(train)?;
    let rest = others.iter().map(|s| stats.apply(s)).collect::<Result<_>>()?;
    Ok((stats.apply(train)?, rest, stats))
}
