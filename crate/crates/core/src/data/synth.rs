//! Synthetic motor-imagery-like EEG.
//!
//! Every trial is pink noise on all channels. A trial of class `k` adds an
//! amplitude-modulated 8-12 Hz burst to channel `k`, and the same burst at
//! 0.3x on channels `k - 1` and `k + 1`. The burst is scaled so its power
//! on channel `k` sits `snr_db` above that channel's noise power.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::EEGTrialSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const NOISE_RMS_UV: f64 = 10.0;
const NEIGHBOR_GAIN: f64 = 0.3;
const BURN_IN: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub n_classes: usize,
    pub n_channels: usize,
    pub n_samples: usize,
    pub sampling_rate_hz: f64,
    pub snr_db: f64,
    pub seed: u64,
    pub session: String,
}

impl SynthConfig {
    pub fn new(n_per_class: usize, n_classes: usize, n_channels: usize, n_samples: usize, snr_db: f64, seed: u64) -> Self {
        Self {
            n_per_class,
            n_classes,
            n_channels,
            n_samples,
            sampling_rate_hz: 250.0,
            snr_db,
            seed,
            session: "synth".into(),
        }
    }
}

/// Paul Kellet's refined pink-noise filter.
#[derive(Default)]
struct Pink {
    b: [f64; 7],
}

impl Pink {
    fn next(&mut self, white: f64) -> f64 {
        let b = &mut self.b;
        b[0] = 0.99886 * b[0] + white * 0.0555179;
        b[1] = 0.99332 * b[1] + white * 0.0750759;
        b[2] = 0.96900 * b[2] + white * 0.1538520;
        b[3] = 0.86650 * b[3] + white * 0.3104856;
        b[4] = 0.55000 * b[4] + white * 0.5329522;
        b[5] = -0.7616 * b[5] - white * 0.0168980;
        let out = b[..6].iter().sum::<f64>() + b[6] + white * 0.5362;
        b[6] = white * 0.115926;
        out
    }
}

fn pink_noise<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut filter = Pink::default();
    for _ in 0..BURN_IN {
        filter.next(rng.sample(StandardNormal));
    }
    let raw: Vec<f64> = (0..len).map(|_| filter.next(rng.sample(StandardNormal))).collect();
    let mean = raw.iter().sum::<f64>() / len as f64;
    let rms = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64).sqrt().max(f64::MIN_POSITIVE);
    raw.iter().map(|v| (v - mean) / rms * NOISE_RMS_UV).collect()
}

fn burst<R: Rng>(rng: &mut R, len: usize, fs: f64) -> Vec<f64> {
    let freq = rng.random_range(8.0..12.0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let width = ((len as f64 * rng.random_range(0.5..0.9)) as usize).max(2);
    let start = rng.random_range(0..=len - width);
    (0..len)
        .map(|t| {
            if t < start || t >= start + width {
                return 0.0;
            }
            let env = 0.5 - 0.5 * (2.0 * PI * (t - start) as f64 / (width - 1) as f64).cos();
            env * (2.0 * PI * freq * t as f64 / fs + phase).sin()
        })
        .collect()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Generates `n_per_class * n_classes` trials, classes interleaved.
pub fn synth_generate(cfg: &SynthConfig) -> Result<EEGTrialSet> {
    let SynthConfig { n_per_class, n_classes, n_channels: c, n_samples: l, sampling_rate_hz: fs, snr_db, seed, .. } =
        *cfg;
    if n_classes == 0 || n_classes > c {
        return Err(Error::Config(format!("need 1..={c} classes for {c} channels, got {n_classes}")));
    }
    if l < 2 || !(fs > 0.0) || !snr_db.is_finite() {
        return Err(Error::Config("synthetic trials need >= 2 samples, positive rate and finite SNR".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n_per_class * n_classes;
    let mut data = Vec::with_capacity(n * c * l);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % n_classes;
        let mut channels: Vec<Vec<f64>> = (0..c).map(|_| pink_noise(&mut rng, l)).collect();
        let s = burst(&mut rng, l, fs);
        let gain = (power(&channels[k]) * 10f64.powf(snr_db / 10.0) / power(&s)).sqrt();
        for (ch, row) in channels.iter_mut().enumerate() {
            let g = if ch == k {
                gain
            } else if ch + 1 == k || ch == k + 1 {
                gain * NEIGHBOR_GAIN
            } else {
                continue;
            };
            row.iter_mut().zip(&s).for_each(|(v, &b)| *v += g * b);
        }
        data.extend(channels.iter().flatten().map(|&v| v as f32));
        labels.push(k);
    }
    EEGTrialSet::new(
        Tensor::new(vec![n, c, l], data)?,
        labels,
        n_classes,
        fs,
        (0..c).map(|i| format!("S{i}")).collect(),
        vec![cfg.session.clone(); n],
    )
}
