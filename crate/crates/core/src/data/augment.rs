use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EEGTrialSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Segment-and-recombine augmentation.
///
/// Each trial is cut into `n_segments` equal pieces along time. For every
/// real trial, `multiplier` artificial trials of the same class are built
/// whose slot `i` is segment `i` of a uniformly drawn same-class trial. The
/// artificial trials are appended after the originals.
pub fn augment_recombine(set: &EEGTrialSet, n_segments: usize, multiplier: usize, seed: u64) -> Result<EEGTrialSet> {
    let (c, l) = (set.n_channels(), set.n_samples());
    if n_segments == 0 || l % n_segments != 0 {
        return Err(Error::arg("augment", format!("{l} samples do not split into {n_segments} segments")));
    }
    let seg = l / n_segments;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); set.n_classes];
    for (i, &y) in set.labels.iter().enumerate() {
        members[y].push(i);
    }
    for (class, m) in members.iter().enumerate() {
        if m.len() == 1 {
            log::warn!("class {class} has a single trial; its artificial trials are plain copies");
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_new = set.len() * multiplier;
    let mut data = Vec::with_capacity(n_new * c * l);
    let mut labels = Vec::with_capacity(n_new);
    let mut sessions = Vec::with_capacity(n_new);
    for _ in 0..multiplier {
        for (i, &y) in set.labels.iter().enumerate() {
            let pool = &members[y];
            let donors: Vec<usize> = (0..n_segments).map(|_| pool[rng.random_range(0..pool.len())]).collect();
            for ch in 0..c {
                for (slot, &donor) in donors.iter().enumerate() {
                    let start = ch * l + slot * seg;
                    data.extend_from_slice(&set.trial(donor)[start..start + seg]);
                }
            }
            labels.push(y);
            sessions.push(set.session_ids[i].clone());
        }
    }
    let artificial = EEGTrialSet {
        trials: Tensor::new(vec![n_new, c, l], data)?,
        labels,
        session_ids: sessions,
        ..set.clone()
    };
    set.concat(&artificial)
}
