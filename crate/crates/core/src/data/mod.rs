//! Trial sets, file formats, splits, augmentation and synthetic EEG.

mod archive;
mod augment;
mod bandpower;
mod csv_import;
mod split;
mod standardize;
mod synth;

use serde::{Deserialize, Serialize};

pub use archive::{read_archive, read_archive_from, write_archive, write_archive_to, ARCHIVE_VERSION};
pub use augment::augment_recombine;
pub use bandpower::BandPowerOracle;
pub use csv_import::import_csv;
pub use split::{SplitSpec, Splits};
pub use standardize::{standardize, ChannelStats, STD_FLOOR};
pub use synth::{synth_generate, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Number of augmentation segments per trial.
pub const N_SEGMENTS: usize = 8;

/// A labelled collection of equally shaped EEG trials.
#[derive(Clone, Debug, PartialEq)]
pub struct EEGTrialSet {
    /// `[N, C, L]`, microvolts.
    pub trials: Tensor<f32>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub sampling_rate_hz: f64,
    pub channel_names: Vec<String>,
    pub session_ids: Vec<String>,
}

impl EEGTrialSet {
    pub fn new(
        trials: Tensor<f32>,
        labels: Vec<usize>,
        n_classes: usize,
        sampling_rate_hz: f64,
        channel_names: Vec<String>,
        session_ids: Vec<String>,
    ) -> Result<Self> {
        let set = Self { trials, labels, n_classes, sampling_rate_hz, channel_names, session_ids };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.trials.shape();
        if shape.len() != 3 {
            return Err(Error::shape("trial set", format!("trials must be [N, C, L], got {shape:?}")));
        }
        let n = shape[0];
        if self.labels.len() != n || self.session_ids.len() != n {
            return Err(Error::shape(
                "trial set",
                format!("{n} trials but {} labels and {} session ids", self.labels.len(), self.session_ids.len()),
            ));
        }
        if self.channel_names.len() != shape[1] {
            return Err(Error::shape(
                "trial set",
                format!("{} channels but {} channel names", shape[1], self.channel_names.len()),
            ));
        }
        if self.n_classes == 0 {
            return Err(Error::Config("trial set needs at least one class".into()));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::Config(format!("label {bad} out of range for {} classes", self.n_classes)));
        }
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(Error::Config(format!("sampling rate must be positive, got {}", self.sampling_rate_hz)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_channels(&self) -> usize {
        self.trials.shape()[1]
    }

    pub fn n_samples(&self) -> usize {
        self.trials.shape()[2]
    }

    pub fn trial(&self, i: usize) -> &[f32] {
        let size = self.n_channels() * self.n_samples();
        &self.trials.data()[i * size..(i + 1) * size]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Trials at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.n_channels() * self.n_samples());
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        Self {
            trials: Tensor::new(vec![indices.len(), self.n_channels(), self.n_samples()], data)
                .expect("subset of a valid set"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            sampling_rate_hz: self.sampling_rate_hz,
            channel_names: self.channel_names.clone(),
            session_ids: indices.iter().map(|&i| self.session_ids[i].clone()).collect(),
        }
    }

    /// Appends `other`, which must share geometry and metadata.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.trials.shape()[1..] != other.trials.shape()[1..]
            || self.n_classes != other.n_classes
            || self.channel_names != other.channel_names
            || self.sampling_rate_hz != other.sampling_rate_hz
        {
            return Err(Error::shape("trial set concat", "sets differ in geometry or metadata"));
        }
        let mut out = self.clone();
        let mut data = self.trials.data().to_vec();
        data.extend_from_slice(other.trials.data());
        out.trials = Tensor::new(vec![self.len() + other.len(), self.n_channels(), self.n_samples()], data)?;
        out.labels.extend_from_slice(&other.labels);
        out.session_ids.extend(other.session_ids.iter().cloned());
        Ok(out)
    }

    /// Keeps the first `len` samples of every trial.
    pub fn crop(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.n_samples() {
            return Err(Error::arg("crop", format!("cannot crop {} samples to {len}", self.n_samples())));
        }
        if len == self.n_samples() {
            return Ok(self.clone());
        }
        let mut out = self.clone();
        out.trials = if self.is_empty() {
            Tensor::new(vec![0, self.n_channels(), len], Vec::new())?
        } else {
            self.trials.narrow(2, 0, len)?
        };
        Ok(out)
    }

    /// Model input for the trials at `indices`, `[B, C, L]`.
    pub fn batch<T: Float>(&self, indices: &[usize]) -> Tensor<T> {
        let mut data = Vec::with_capacity(indices.len() * self.n_channels() * self.n_samples());
        for &i in indices {
            data.extend(self.trial(i).iter().map(|&v| T::of(v as f64)));
        }
        Tensor::new(vec![indices.len(), self.n_channels(), self.n_samples()], data).expect("batch of a valid set")
    }

    /// Session tags in order of first appearance.
    pub fn sessions(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        for s in &self.session_ids {
            if !seen.contains(s) {
                seen.push(s.clone());
            }
        }
        seen
    }
}

/// Largest trial length `<= len` that splits into `segments` equal parts
/// and tiles the pooling window exactly.
pub fn effective_length(len: usize, segments: usize, pool_window: usize, pool_stride: usize) -> Option<usize> {
    if segments == 0 || pool_stride == 0 {
        return None;
    }
    (pool_window.max(1)..=len)
        .rev()
        .find(|&l| l % segments == 0 && (l - pool_window).is_multiple_of(pool_stride))
}

/// Named dataset geometries.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    #[serde(rename = "2a")]
    Bci2a,
    #[serde(rename = "2b")]
    Bci2b,
    Synth,
}

impl Dataset {
    /// `(channels, classes)` required by the dataset, if fixed.
    pub fn geometry(self) -> Option<(usize, usize)> {
        match self {
            Dataset::Bci2a => Some((22, 4)),
            Dataset::Bci2b => Some((3, 2)),
            Dataset::Synth => None,
        }
    }

    /// Number of leading sessions used for training.
    pub fn train_sessions(self) -> usize {
        match self {
            Dataset::Bci2a | Dataset::Synth => 1,
            Dataset::Bci2b => 3,
        }
    }

    pub fn check(self, set: &EEGTrialSet) -> Result<()> {
        if let Some((c, k)) = self.geometry() {
            if set.n_channels() != c || set.n_classes != k {
                return Err(Error::Config(format!(
                    "dataset {self} needs {c} channels and {k} classes, archive has {} channels and {} classes",
                    set.n_channels(),
                    set.n_classes
                )));
            }
        }
        Ok(())
    }
}

impl std::fmt::Display for Dataset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Dataset::Bci2a => "2a",
            Dataset::Bci2b => "2b",
            Dataset::Synth => "synth",
        })
    }
}

impl std::str::FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2a" => Ok(Dataset::Bci2a),
            "2b" => Ok(Dataset::Bci2b),
            "synth" => Ok(Dataset::Synth),
            _ => Err(Error::Config(format!("unknown dataset `{s}` (expected 2a, 2b or synth)"))),
        }
    }
}

#[cfg(test)]
pub(crate) fn toy_set(n_per_class: usize, n_classes: usize, c: usize, l: usize) -> EEGTrialSet {
    let n = n_per_class * n_classes;
    let trials = Tensor::from_fn(&[n, c, l], |i| i as f32);
    EEGTrialSet::new(
        trials,
        (0..n).map(|i| i % n_classes).collect(),
        n_classes,
        250.0,
        (0..c).map(|i| format!("ch{i}")).collect(),
        (0..n).map(|i| if i < n / 2 { "a".to_string() } else { "b".to_string() }).collect(),
    )
    .unwrap()
}
