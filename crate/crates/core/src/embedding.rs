//! Multi-scale temporal convolution, spatial collapse and dual pooling.
//!
//! `[B, C, L]` trials become two token sequences `[B, L', C']`: one of
//! windowed variances and one of windowed means of the same feature map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{
    Activation, BatchNorm, Conv2dSpec, Float, Graph, Mode, NormConfig, ParamId, ParamStore, PoolKind, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub n_channels: usize,
    /// Temporal kernel lengths, odd and strictly increasing.
    pub kernels: Vec<usize>,
    /// Filters per temporal branch.
    pub filters: usize,
    /// Output width of the spatial convolution (model width of the
    /// temporal encoder).
    pub d_model: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub norm: NormConfig,
}

impl EmbeddingConfig {
    pub fn new(n_channels: usize) -> Self {
        Self {
            n_channels,
            kernels: vec![15, 25, 35, 45, 55, 65],
            filters: 4,
            d_model: 32,
            pool_window: 75,
            pool_stride: 15,
            norm: NormConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || self.filters == 0 || self.d_model == 0 || self.kernels.is_empty() {
            return Err(Error::Config("embedding sizes must be positive".into()));
        }
        if self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config(format!("temporal kernels must be odd: {:?}", self.kernels)));
        }
        if self.kernels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("temporal kernels must increase: {:?}", self.kernels)));
        }
        if self.pool_window == 0 || self.pool_stride == 0 {
            return Err(Error::Config("pool window and stride must be positive".into()));
        }
        Ok(())
    }

    /// Number of pooled tokens for a trial of `n_samples`.
    pub fn tokens(&self, n_samples: usize) -> Result<usize> {
        if n_samples < self.pool_window || !(n_samples - self.pool_window).is_multiple_of(self.pool_stride) {
            return Err(Error::Config(format!(
                "{n_samples} samples do not tile pool window {} / stride {}",
                self.pool_window, self.pool_stride
            )));
        }
        Ok((n_samples - self.pool_window) / self.pool_stride + 1)
    }
}

#[derive(Clone, Debug)]
pub struct Embedding<T> {
    pub cfg: EmbeddingConfig,
    /// One `[F1, 1, 1, k]` weight per temporal branch.
    pub branches: Vec<ParamId>,
    pub bn1: BatchNorm<T>,
    /// `[C', branches * F1, C, 1]`
    pub spatial: ParamId,
    pub bn2: BatchNorm<T>,
}

impl<T: Float> Embedding<T> {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore<T>, prefix: &str, cfg: EmbeddingConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let branches = cfg
            .kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let w = Tensor::uniform(&[cfg.filters, 1, 1, k], 1.0 / (k as f64).sqrt(), rng);
                store.add(format!("{prefix}.tconv{i}"), w, true)
            })
            .collect();
        let concat = cfg.kernels.len() * cfg.filters;
        let bn1 = BatchNorm::new(store, &format!("{prefix}.bn1"), concat, cfg.norm);
        let fan_in = concat * cfg.n_channels;
        let w = Tensor::uniform(&[cfg.d_model, concat, cfg.n_channels, 1], 1.0 / (fan_in as f64).sqrt(), rng);
        let spatial = store.add(format!("{prefix}.sconv"), w, true);
        let bn2 = BatchNorm::new(store, &format!("{prefix}.bn2"), cfg.d_model, cfg.norm);
        Ok(Self { cfg, branches, bn1, spatial, bn2 })
    }

    /// Maps `x: [B, C, L]` to the `(variance, mean)` token streams, each
    /// `[B, L', C']`.
    pub fn forward(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<(Var, Var)> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.cfg.n_channels {
            return Err(Error::shape(
                "embedding",
                format!("input {shape:?}, expected [B, {}, L]", self.cfg.n_channels),
            ));
        }
        let (b, c, l) = (shape[0], shape[1], shape[2]);
        self.cfg.tokens(l).map_err(|e| Error::shape("embedding", e.to_string()))?;

        let x = g.reshape(x, &[b, 1, c, l])?;
        let mut maps = Vec::with_capacity(self.branches.len());
        for (&id, &k) in self.branches.iter().zip(&self.cfg.kernels) {
            let w = g.param(store, id);
            maps.push(g.conv2d(x, w, None, Conv2dSpec::padded(0, (k - 1) / 2))?);
        }
        let h = g.concat(&maps, 1)?;
        let h = self.bn1.forward(g, store, h, mode)?;
        let w = g.param(store, self.spatial);
        let h = g.conv2d(h, w, None, Conv2dSpec::default())?;
        let h = self.bn2.forward(g, store, h, mode)?;
        let h = g.activation(h, Activation::Elu)?;

        let (win, stride) = (self.cfg.pool_window, self.cfg.pool_stride);
        let mut streams = [PoolKind::Var, PoolKind::Avg].into_iter().map(|kind| {
            let p = g.sliding_pool(h, kind, win, stride)?;
            let tokens = g.shape(p)[3];
            let p = g.reshape(p, &[b, self.cfg.d_model, tokens])?;
            g.transpose12(p)
        });
        let x_var = streams.next().unwrap()?;
        let x_avg = streams.next().unwrap()?;
        Ok((x_var, x_avg))
    }
}
