use serde::{Deserialize, Serialize};

use super::graph::{Backward, Graph, ParamId, ParamStore, Var};
use super::{Float, Mode, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConfig {
    pub eps: f64,
    /// Weight of the current batch in the running-average update.
    pub momentum: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self { eps: 1e-5, momentum: 0.1 }
    }
}

/// Per-channel running mean/variance used in infer mode. Absent until the
/// first train-mode forward.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchNormStats<T> {
    pub running: Option<(Tensor<T>, Tensor<T>)>,
}

/// Mean of `values` computed as `v0 + mean(v - v0)`: exact for constant input.
#[inline]
fn shifted_mean<T: Float>(values: impl Iterator<Item = T> + Clone, n: usize) -> T {
    let mut it = values.clone();
    let Some(v0) = it.next() else { return T::zero() };
    let s: T = values.map(|v| v - v0).sum();
    v0 + s / T::of(n as f64)
}

struct BatchNormOp<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    train: bool,
    channels: usize,
    inner: usize,
}

impl<T: Float> Backward<T> for BatchNormOp<T> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (c, s) = (self.channels, self.inner);
        let batch = x.shape()[0];
        let n = T::of((batch * s) as f64);
        let gd = grad.data();
        let block = |b: usize, ch: usize| (b * c + ch) * s;

        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for b in 0..batch {
            for ch in 0..c {
                let o = block(b, ch);
                for k in 0..s {
                    sum_g[ch] += gd[o + k];
                    sum_gx[ch] += gd[o + k] * self.xhat[o + k];
                }
            }
        }

        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(x.shape());
            let out = gx.data_mut();
            for b in 0..batch {
                for ch in 0..c {
                    let o = block(b, ch);
                    let scale = gamma.data()[ch] * self.inv_std[ch];
                    if self.train {
                        let (mg, mgx) = (sum_g[ch] / n, sum_gx[ch] / n);
                        for k in 0..s {
                            out[o + k] = scale * (gd[o + k] - mg - self.xhat[o + k] * mgx);
                        }
                    } else {
                        for k in 0..s {
                            out[o + k] = scale * gd[o + k];
                        }
                    }
                }
            }
            gx
        });
        let ggamma = needs[1].then(|| Tensor::new(vec![c], sum_gx.clone()).expect("channel count"));
        let gbeta = needs[2].then(|| Tensor::new(vec![c], sum_g.clone()).expect("channel count"));
        Ok(vec![gx, ggamma, gbeta])
    }
}

struct LayerNormOp<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    width: usize,
}

impl<T: Float> Backward<T> for LayerNormOp<T> {
    fn name(&self) -> &'static str {
        "layer_norm"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let d = self.width;
        let n = T::of(d as f64);
        let gd = grad.data();
        let gam = gamma.data();
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut ggamma = vec![T::zero(); d];
        let mut gbeta = vec![T::zero(); d];
        for (r, (grow, xh)) in gd.chunks_exact(d).zip(self.xhat.chunks_exact(d)).enumerate() {
            let mut s1 = T::zero();
            let mut s2 = T::zero();
            for k in 0..d {
                let dxh = grow[k] * gam[k];
                s1 += dxh;
                s2 += dxh * xh[k];
                ggamma[k] += grow[k] * xh[k];
                gbeta[k] += grow[k];
            }
            if let Some(gx) = gx.as_mut() {
                let out = &mut gx.data_mut()[r * d..][..d];
                let (m1, m2) = (s1 / n, s2 / n);
                for k in 0..d {
                    out[k] = self.inv_std[r] * (grow[k] * gam[k] - m1 - xh[k] * m2);
                }
            }
        }
        Ok(vec![
            gx,
            needs[1].then(|| Tensor::new(vec![d], ggamma).expect("width")),
            needs[2].then(|| Tensor::new(vec![d], gbeta).expect("width")),
        ])
    }
}

impl<T: Float> Graph<T> {
    /// Batch normalization over axis 1 of `x: [B, C, ...]`.
    ///
    /// Train mode normalizes with biased batch statistics and folds them
    /// into `stats`; infer mode uses `stats` and fails if none exist yet.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        mode: Mode,
        cfg: NormConfig,
    ) -> Result<Var> {
        let xt = self.value(x);
        if xt.rank() < 2 {
            return Err(Error::shape("batch_norm", format!("input {:?} needs a channel axis", xt.shape())));
        }
        let (batch, c) = (xt.shape()[0], xt.shape()[1]);
        let s: usize = xt.shape()[2..].iter().product();
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(Error::shape("batch_norm", format!("affine {:?} for {c} channels", self.value(p).shape())));
            }
        }
        let xd = xt.data();
        let block = |b: usize, ch: usize| (b * c + ch) * s;
        let channel = |ch: usize| (0..batch).flat_map(move |b| xd[block(b, ch)..block(b, ch) + s].iter().copied());

        let (mean, var) = match mode {
            Mode::Train => {
                let n = batch * s;
                if n < 2 {
                    return Err(Error::arg("batch_norm", "train mode needs at least 2 values per channel"));
                }
                let mut mean = Vec::with_capacity(c);
                let mut var = Vec::with_capacity(c);
                for ch in 0..c {
                    let m = shifted_mean(channel(ch), n);
                    let v: T = channel(ch).map(|v| (v - m) * (v - m)).sum::<T>() / T::of(n as f64);
                    mean.push(m);
                    var.push(v);
                }
                let mom = T::of(cfg.momentum);
                let unbias = T::of(n as f64 / (n - 1) as f64);
                let (old_m, old_v) = match &stats.running {
                    Some((m, v)) => (m.data().to_vec(), v.data().to_vec()),
                    None => (vec![T::zero(); c], vec![T::one(); c]),
                };
                let rm = (0..c).map(|k| (T::one() - mom) * old_m[k] + mom * mean[k]).collect();
                let rv = (0..c).map(|k| (T::one() - mom) * old_v[k] + mom * var[k] * unbias).collect();
                stats.running = Some((Tensor::new(vec![c], rm)?, Tensor::new(vec![c], rv)?));
                (mean, var)
            }
            Mode::Infer => {
                let (m, v) = stats.running.as_ref().ok_or(Error::MissingRunningStats)?;
                if m.shape() != [c] {
                    return Err(Error::shape("batch_norm", format!("running stats {:?} for {c} channels", m.shape())));
                }
                (m.data().to_vec(), v.data().to_vec())
            }
        };

        let eps = T::of(cfg.eps);
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); xd.len()];
        let mut y = vec![T::zero(); xd.len()];
        for b in 0..batch {
            for ch in 0..c {
                let o = block(b, ch);
                for k in o..o + s {
                    let h = (xd[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = h;
                    y[k] = gd[ch] * h + bd[ch];
                }
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), y)?;
        let op = BatchNormOp { xhat, inv_std, train: mode == Mode::Train, channels: c, inner: s };
        self.record(value, &[x, gamma, beta], Box::new(op))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xt = self.value(x);
        let d = *xt.shape().last().ok_or_else(|| Error::shape("layer_norm", "rank-0 input"))?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [d] {
                return Err(Error::shape("layer_norm", format!("affine {:?} for width {d}", self.value(p).shape())));
            }
        }
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let eps = T::of(eps);
        let rows = xt.numel() / d;
        let mut xhat = Vec::with_capacity(xt.numel());
        let mut inv_std = Vec::with_capacity(rows);
        let mut y = Vec::with_capacity(xt.numel());
        for row in xt.data().chunks_exact(d) {
            let m = shifted_mean(row.iter().copied(), d);
            let v: T = row.iter().map(|&v| (v - m) * (v - m)).sum::<T>() / T::of(d as f64);
            let inv = T::one() / (v + eps).sqrt();
            inv_std.push(inv);
            for (k, &v) in row.iter().enumerate() {
                let h = (v - m) * inv;
                xhat.push(h);
                y.push(gd[k] * h + bd[k]);
            }
        }
        let value = Tensor::new(xt.shape().to_vec(), y)?;
        self.record(value, &[x, gamma, beta], Box::new(LayerNormOp { xhat, inv_std, width: d }))
    }
}

/// Batch-norm layer: learnable per-channel affine plus running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub stats: BatchNormStats<T>,
    pub cfg: NormConfig,
}

impl<T: Float> BatchNorm<T> {
    pub fn new(store: &mut ParamStore<T>, prefix: &str, channels: usize, cfg: NormConfig) -> Self {
        let gamma = store.add(format!("{prefix}.gamma"), Tensor::ones(&[channels]), false);
        let beta = store.add(format!("{prefix}.beta"), Tensor::zeros(&[channels]), false);
        Self { gamma, beta, stats: BatchNormStats::default(), cfg }
    }

    pub fn forward(&mut self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let (gamma, beta) = (g.param(store, self.gamma), g.param(store, self.beta));
        g.batch_norm(x, gamma, beta, &mut self.stats, mode, self.cfg)
    }
}
