//! The assembled network: embedding, temporal and spatial encoder paths,
//! and the convolutional classification head.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, EmbeddingConfig};
use crate::encoder::{linear_params, EncoderConfig, EncoderStack};
use crate::error::{Error, Result};
use crate::ssm::ScanMode;
use crate::tensor::{Activation, BatchNorm, Conv2dSpec, Float, Graph, Mode, ParamId, ParamStore, Tensor, Var};

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_FORMAT};

/// Which encoder stacks are present.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    TemporalOnly,
    SpatialOnly,
    None,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::TemporalOnly, Ablation::SpatialOnly, Ablation::None];

    pub fn has_temporal(self) -> bool {
        matches!(self, Ablation::Full | Ablation::TemporalOnly)
    }

    pub fn has_spatial(self) -> bool {
        matches!(self, Ablation::Full | Ablation::SpatialOnly)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::TemporalOnly => "temporal_only",
            Ablation::SpatialOnly => "spatial_only",
            Ablation::None => "none",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "temporal" | "temporal_only" => Ok(Ablation::TemporalOnly),
            "spatial" | "spatial_only" => Ok(Ablation::SpatialOnly),
            "none" => Ok(Ablation::None),
            other => Err(Error::Config(format!("unknown ablation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub embedding: EmbeddingConfig,
    /// Encoder over pooled time tokens; width is the embedding width.
    pub temporal: EncoderConfig,
    /// Encoder over embedding channels as tokens; width is the token count.
    pub spatial: EncoderConfig,
    /// Kernel and stride of the head convolution over tokens.
    pub head_kernel: usize,
    /// Per-branch width after the head projection.
    pub head_width: usize,
    pub ablation: Ablation,
}

impl ModelConfig {
    /// Default architecture for `n_channels x n_samples` trials.
    pub fn new(n_channels: usize, n_samples: usize, n_classes: usize) -> Result<Self> {
        let embedding = EmbeddingConfig::new(n_channels);
        let tokens = embedding.tokens(n_samples)?;
        let cfg = Self {
            n_channels,
            n_samples,
            n_classes,
            temporal: EncoderConfig::new(embedding.d_model),
            spatial: EncoderConfig::new(tokens),
            embedding,
            head_kernel: 8,
            head_width: 64,
            ablation: Ablation::Full,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 22 electrodes, 4 classes, 960 samples.
    pub fn bci2a() -> Self {
        Self::new(22, 960, 4).expect("valid preset")
    }

    /// 3 electrodes, 2 classes, 960 samples.
    pub fn bci2b() -> Self {
        Self::new(3, 960, 2).expect("valid preset")
    }

    /// Small geometry for gradient checks: 3 channels, 64 samples, 2 classes.
    pub fn tiny() -> Self {
        let embedding = EmbeddingConfig {
            n_channels: 3,
            kernels: vec![3, 5, 7, 9, 11, 13],
            filters: 2,
            d_model: 8,
            pool_window: 8,
            pool_stride: 4,
            norm: Default::default(),
        };
        let tokens = embedding.tokens(64).expect("valid preset");
        let encoder = |d| {
            let mut e = EncoderConfig::new(d);
            e.mamba.d_state = 4;
            e.mamba.train_scan = ScanMode::Parallel { chunk: 4 };
            e
        };
        Self {
            n_channels: 3,
            n_samples: 64,
            n_classes: 2,
            temporal: encoder(embedding.d_model),
            spatial: encoder(tokens),
            embedding,
            head_kernel: 8,
            head_width: 8,
            ablation: Ablation::Full,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    pub fn tokens(&self) -> Result<usize> {
        self.embedding.tokens(self.n_samples)
    }

    pub fn validate(&self) -> Result<()> {
        self.embedding.validate()?;
        self.temporal.validate()?;
        self.spatial.validate()?;
        if self.n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        if self.embedding.n_channels != self.n_channels {
            return Err(Error::Config("embedding channel count differs from model".into()));
        }
        let tokens = self.tokens()?;
        let width = self.embedding.d_model;
        if self.temporal.d_model() != width {
            return Err(Error::Config(format!("temporal width {} != embedding width {width}", self.temporal.d_model())));
        }
        if self.spatial.d_model() != tokens {
            return Err(Error::Config(format!("spatial width {} != token count {tokens}", self.spatial.d_model())));
        }
        if self.head_kernel == 0 || self.head_width == 0 {
            return Err(Error::Config("head sizes must be positive".into()));
        }
        if 2 * tokens < self.head_kernel || 2 * width < self.head_kernel {
            return Err(Error::Config(format!("head kernel {} longer than a path's token count", self.head_kernel)));
        }
        Ok(())
    }
}

/// Raw class scores `[B, n_classes]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits<T> {
    pub values: Tensor<T>,
}

impl<T: Float> Logits<T> {
    pub fn n_classes(&self) -> usize {
        self.values.shape()[1]
    }

    /// Index of the largest logit per row (first on ties).
    pub fn predictions(&self) -> Vec<usize> {
        self.values
            .data()
            .chunks_exact(self.n_classes())
            .map(|row| row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best }))
            .collect()
    }
}

/// Token-axis convolution, batch norm, ELU and projection for one path.
#[derive(Clone, Debug)]
pub struct Head<T> {
    pub conv: ParamId,
    pub bn: BatchNorm<T>,
    pub fc: (ParamId, ParamId),
    pub width: usize,
    pub tokens: usize,
    pub kernel: usize,
}

impl<T: Float> Head<T> {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        width: usize,
        tokens: usize,
        cfg: &ModelConfig,
        rng: &mut R,
    ) -> Self {
        let kernel = cfg.head_kernel;
        let w = Tensor::uniform(&[width, width, 1, kernel], 1.0 / ((width * kernel) as f64).sqrt(), rng);
        let conv = store.add(format!("{prefix}.conv"), w, true);
        let bn = BatchNorm::new(store, &format!("{prefix}.bn"), width, cfg.embedding.norm);
        let flat = width * (tokens / kernel);
        let fc = linear_params(store, &format!("{prefix}.fc"), flat, cfg.head_width, rng);
        Self { conv, bn, fc, width, tokens, kernel }
    }

    /// `x: [B, tokens, width]` to `[B, head_width]`. Trailing tokens that
    /// do not fill a whole kernel are dropped.
    fn forward(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let b = g.shape(x)[0];
        let used = (self.tokens / self.kernel) * self.kernel;
        let h = g.transpose12(x)?;
        let h = if used < self.tokens { g.narrow(h, 2, 0, used)? } else { h };
        let h = g.reshape(h, &[b, self.width, 1, used])?;
        let w = g.param(store, self.conv);
        let h = g.conv2d(h, w, None, Conv2dSpec::strided(1, self.kernel))?;
        let h = self.bn.forward(g, store, h, mode)?;
        let h = g.activation(h, Activation::Elu)?;
        let h = g.reshape(h, &[b, self.width * (used / self.kernel)])?;
        let (w, bias) = (g.param(store, self.fc.0), g.param(store, self.fc.1));
        g.linear(h, w, Some(bias))
    }
}

#[derive(Clone, Debug)]
pub struct STMambaNet<T: Float> {
    pub cfg: ModelConfig,
    pub store: ParamStore<T>,
    pub embedding: Embedding<T>,
    pub temporal: Option<EncoderStack>,
    pub spatial: Option<EncoderStack>,
    pub temporal_head: Head<T>,
    pub spatial_head: Head<T>,
    pub classifier: (ParamId, ParamId),
}

impl<T: Float> STMambaNet<T> {
    /// Builds the network with parameters drawn deterministically from `seed`.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let tokens = cfg.tokens()?;
        let width = cfg.embedding.d_model;
        let embedding = Embedding::new(&mut store, "embedding", cfg.embedding.clone(), &mut rng)?;
        let temporal = match cfg.ablation.has_temporal() {
            true => Some(EncoderStack::new(&mut store, "temporal", &cfg.temporal, &mut rng)?),
            false => None,
        };
        let spatial = match cfg.ablation.has_spatial() {
            true => Some(EncoderStack::new(&mut store, "spatial", &cfg.spatial, &mut rng)?),
            false => None,
        };
        let temporal_head = Head::new(&mut store, "temporal_head", width, 2 * tokens, &cfg, &mut rng);
        let spatial_head = Head::new(&mut store, "spatial_head", tokens, 2 * width, &cfg, &mut rng);
        let classifier = linear_params(&mut store, "classifier", 2 * cfg.head_width, cfg.n_classes, &mut rng);
        Ok(Self { cfg, store, embedding, temporal, spatial, temporal_head, spatial_head, classifier })
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }

    /// Logits `[B, n_classes]` for `x: [B, C, L]`. `rng` drives dropout in
    /// train mode.
    pub fn forward<R: Rng + ?Sized>(&mut self, g: &mut Graph<T>, x: Var, mode: Mode, rng: &mut R) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[1] != self.cfg.n_channels || shape[2] != self.cfg.n_samples {
            return Err(Error::shape(
                "model",
                format!("input {shape:?}, expected [B, {}, {}]", self.cfg.n_channels, self.cfg.n_samples),
            ));
        }
        let store = &self.store;
        let (x_var, x_avg) = self.embedding.forward(g, store, x, mode)?;

        let (t_var, t_avg) = match &self.temporal {
            Some(stack) => stack.forward_shared(g, store, x_var, x_avg, mode, rng)?,
            None => (x_var, x_avg),
        };
        let x_t = g.concat(&[t_var, t_avg], 1)?;

        let (s_var, s_avg) = (g.transpose12(x_var)?, g.transpose12(x_avg)?);
        let (s_var, s_avg) = match &self.spatial {
            Some(stack) => stack.forward_shared(g, store, s_var, s_avg, mode, rng)?,
            None => (s_var, s_avg),
        };
        let x_s = g.concat(&[s_var, s_avg], 1)?;

        let f_s = self.spatial_head.forward(g, store, x_s, mode)?;
        let f_t = self.temporal_head.forward(g, store, x_t, mode)?;
        let features = g.concat(&[f_s, f_t], 1)?;
        let (w, b) = (g.param(store, self.classifier.0), g.param(store, self.classifier.1));
        g.linear(features, w, Some(b))
    }

    /// Infer-mode logits for a batch of trials.
    pub fn logits(&mut self, x: &Tensor<T>) -> Result<Logits<T>> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let y = self.forward(&mut g, xv, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(Logits { values: g.value(y).clone() })
    }

    pub fn predict(&mut self, x: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.predictions())
    }

    /// Every batch-norm layer with its parameter-name prefix.
    pub fn batch_norms_mut(&mut self) -> Vec<(String, &mut BatchNorm<T>)> {
        let layers = [
            &mut self.embedding.bn1,
            &mut self.embedding.bn2,
            &mut self.temporal_head.bn,
            &mut self.spatial_head.bn,
        ];
        layers
            .into_iter()
            .map(|bn| {
                let name = self.store.get(bn.gamma).name.trim_end_matches(".gamma").to_string();
                (name, bn)
            })
            .collect()
    }

    /// The same network in another precision, including running statistics.
    pub fn cast<U: Float>(&self) -> STMambaNet<U> {
        let bn = |b: &BatchNorm<T>| BatchNorm {
            gamma: b.gamma,
            beta: b.beta,
            cfg: b.cfg,
            stats: crate::tensor::BatchNormStats {
                running: b.stats.running.as_ref().map(|(m, v)| (m.cast(), v.cast())),
            },
        };
        let head = |h: &Head<T>| Head { conv: h.conv, bn: bn(&h.bn), fc: h.fc, width: h.width, tokens: h.tokens, kernel: h.kernel };
        STMambaNet {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            embedding: Embedding {
                cfg: self.embedding.cfg.clone(),
                branches: self.embedding.branches.clone(),
                bn1: bn(&self.embedding.bn1),
                spatial: self.embedding.spatial,
                bn2: bn(&self.embedding.bn2),
            },
            temporal: self.temporal.clone(),
            spatial: self.spatial.clone(),
            temporal_head: head(&self.temporal_head),
            spatial_head: head(&self.spatial_head),
            classifier: self.classifier,
        }
    }
}
