//! Band-power nearest-centroid classifier, a model-free reference for how
//! separable a trial set is.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::EEGTrialSet;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct BandPowerOracle {
    pub band_hz: (f64, f64),
    centroids: Vec<Vec<f64>>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Log mean power per channel within `band` (Hann-windowed periodogram).
pub fn band_power_features(set: &EEGTrialSet, band: (f64, f64)) -> Vec<Vec<f64>> {
    let (c, l) = (set.n_channels(), set.n_samples());
    let fft = FftPlanner::new().plan_fft_forward(l);
    let window: Vec<f64> = (0..l).map(|t| 0.5 - 0.5 * (2.0 * PI * t as f64 / l as f64).cos()).collect();
    let bins: Vec<usize> = (0..=l / 2)
        .filter(|&b| {
            let f = b as f64 * set.sampling_rate_hz / l as f64;
            f >= band.0 && f <= band.1
        })
        .collect();
    let mut buf = vec![Complex::new(0.0, 0.0); l];
    (0..set.len())
        .map(|i| {
            (0..c)
                .map(|ch| {
                    let row = &set.trial(i)[ch * l..(ch + 1) * l];
                    for ((z, &v), &w) in buf.iter_mut().zip(row).zip(&window) {
                        *z = Complex::new(v as f64 * w, 0.0);
                    }
                    fft.process(&mut buf);
                    let p = bins.iter().map(|&b| buf[b].norm_sqr()).sum::<f64>() / bins.len().max(1) as f64;
                    (p + 1e-12).ln()
                })
                .collect()
        })
        .collect()
}

impl BandPowerOracle {
    pub const MU_BAND: (f64, f64) = (8.0, 12.0);

    pub fn fit(train: &EEGTrialSet, band_hz: (f64, f64)) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::arg("band-power oracle", "training set is empty"));
        }
        let feats = band_power_features(train, band_hz);
        let dim = feats[0].len();
        let n = feats.len() as f64;
        let mean: Vec<f64> = (0..dim).map(|j| feats.iter().map(|f| f[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..dim)
            .map(|j| (feats.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-12))
            .collect();
        let mut centroids = vec![vec![0.0; dim]; train.n_classes];
        let counts = train.class_counts();
        for (f, &y) in feats.iter().zip(&train.labels) {
            for j in 0..dim {
                centroids[y][j] += (f[j] - mean[j]) / std[j] / counts[y] as f64;
            }
        }
        Ok(Self { band_hz, centroids, mean, std })
    }

    pub fn predict(&self, set: &EEGTrialSet) -> Vec<usize> {
        band_power_features(set, self.band_hz)
            .iter()
            .map(|f| {
                let z: Vec<f64> = f.iter().enumerate().map(|(j, v)| (v - self.mean[j]) / self.std[j]).collect();
                let dist = |c: &Vec<f64>| c.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                (0..self.centroids.len())
                    .min_by(|&a, &b| dist(&self.centroids[a]).total_cmp(&dist(&self.centroids[b])))
                    .unwrap_or(0)
            })
            .collect()
    }

    /// Percentage of trials in `set` classified correctly.
    pub fn accuracy(&self, set: &EEGTrialSet) -> f64 {
        if set.is_empty() {
            return 0.0;
        }
        let hits = self.predict(set).iter().zip(&set.labels).filter(|(p, y)| p == y).count();
        100.0 * hits as f64 / set.len() as f64
    }
}
