use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{standardize, ChannelStats, Dataset, EEGTrialSet};
use crate::error::{Error, Result};

/// Session-based train/test protocol with a stratified validation hold-out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_sessions: BTreeSet<String>,
    pub test_sessions: BTreeSet<String>,
    /// Fraction of each class's training trials (the last ones) held out
    /// for validation.
    pub val_fraction: f64,
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: EEGTrialSet,
    pub val: EEGTrialSet,
    pub test: EEGTrialSet,
}

impl Splits {
    /// All three splits standardized with statistics of the training split.
    pub fn standardized(&self) -> Result<(Splits, ChannelStats)> {
        let (train, mut others, stats) = standardize(&self.train, &[&self.val, &self.test])?;
        let test = others.pop().expect("two sets in");
        let val = others.pop().expect("two sets in");
        Ok((Splits { train, val, test }, stats))
    }
}

impl SplitSpec {
    pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

    pub fn new(
        train: impl IntoIterator<Item = impl Into<String>>,
        test: impl IntoIterator<Item = impl Into<String>>,
        val_fraction: f64,
    ) -> Result<Self> {
        let spec = Self {
            train_sessions: train.into_iter().map(Into::into).collect(),
            test_sessions: test.into_iter().map(Into::into).collect(),
            val_fraction,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The first `n_train` sessions (in order of appearance) train, the
    /// rest test.
    pub fn leading(set: &EEGTrialSet, n_train: usize, val_fraction: f64) -> Result<Self> {
        let sessions = set.sessions();
        if sessions.len() <= n_train {
            return Err(Error::Config(format!(
                "need more than {n_train} sessions to hold out a test session, found {sessions:?}"
            )));
        }
        let (train, test) = sessions.split_at(n_train);
        Self::new(train.to_vec(), test.to_vec(), val_fraction)
    }

    /// Session protocol of a named dataset.
    pub fn for_dataset(dataset: Dataset, set: &EEGTrialSet) -> Result<Self> {
        Self::leading(set, dataset.train_sessions(), Self::DEFAULT_VAL_FRACTION)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        if let Some(s) = self.train_sessions.intersection(&self.test_sessions).next() {
            return Err(Error::Config(format!("session `{s}` is both train and test")));
        }
        Ok(())
    }

    pub fn apply(&self, set: &EEGTrialSet) -> Result<Splits> {
        self.validate()?;
        let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); set.n_classes];
        let mut test = Vec::new();
        for (i, s) in set.session_ids.iter().enumerate() {
            if self.train_sessions.contains(s) {
                per_class[set.labels[i]].push(i);
            } else if self.test_sessions.contains(s) {
                test.push(i);
            }
        }
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for idx in per_class {
            let n_val = (idx.len() as f64 * self.val_fraction).floor() as usize;
            let (t, v) = idx.split_at(idx.len() - n_val);
            train.extend_from_slice(t);
            val.extend_from_slice(v);
        }
        train.sort_unstable();
        val.sort_unstable();
        Ok(Splits { train: set.subset(&train), val: set.subset(&val), test: set.subset(&test) })
    }
}
