//! Pre-norm residual Mamba encoder layers and stacks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{MambaBlock, MambaConfig};
use crate::tensor::{Activation, Float, Graph, Mode, ParamId, ParamStore, Tensor, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub mamba: MambaConfig,
    pub depth: usize,
    pub ffn_ratio: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn new(d_model: usize) -> Self {
        Self { mamba: MambaConfig::new(d_model), depth: 2, ffn_ratio: 2, dropout: 0.3 }
    }

    pub fn d_model(&self) -> usize {
        self.mamba.d_model
    }

    pub fn validate(&self) -> Result<()> {
        self.mamba.validate()?;
        if self.depth == 0 || self.ffn_ratio == 0 {
            return Err(Error::Config("encoder depth and ffn ratio must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// `x1 = x + dropout(mamba(ln1(x)))`, `out = x1 + ffn(ln2(x1))`.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub norm1: (ParamId, ParamId),
    pub mamba: MambaBlock,
    pub norm2: (ParamId, ParamId),
    pub ffn_in: (ParamId, ParamId),
    pub ffn_out: (ParamId, ParamId),
    pub dropout: f64,
}

fn layer_norm_params<T: Float>(store: &mut ParamStore<T>, prefix: &str, d: usize) -> (ParamId, ParamId) {
    (
        store.add(format!("{prefix}.gamma"), Tensor::ones(&[d]), false),
        store.add(format!("{prefix}.beta"), Tensor::zeros(&[d]), false),
    )
}

pub(crate) fn linear_params<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    din: usize,
    dout: usize,
    rng: &mut R,
) -> (ParamId, ParamId) {
    let bound = 1.0 / (din as f64).sqrt();
    (
        store.add(format!("{prefix}.weight"), Tensor::uniform(&[dout, din], bound, rng), true),
        store.add(format!("{prefix}.bias"), Tensor::uniform(&[dout], bound, rng), false),
    )
}

impl EncoderLayer {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model();
        let hidden = cfg.ffn_ratio * d;
        let norm1 = layer_norm_params(store, &format!("{prefix}.norm1"), d);
        let mamba = MambaBlock::new(store, &format!("{prefix}.mamba"), cfg.mamba.clone(), rng)?;
        let norm2 = layer_norm_params(store, &format!("{prefix}.norm2"), d);
        let ffn_in = linear_params(store, &format!("{prefix}.ffn_in"), d, hidden, rng);
        let ffn_out = linear_params(store, &format!("{prefix}.ffn_out"), hidden, d, rng);
        Ok(Self { norm1, mamba, norm2, ffn_in, ffn_out, dropout: cfg.dropout })
    }

    pub fn forward<T: Float, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let width = self.mamba.cfg.d_model;
        if g.shape(x).len() != 3 || g.shape(x)[2] != width {
            return Err(Error::shape("encoder", format!("input {:?} for width {width}", g.shape(x))));
        }
        let p = |g: &mut Graph<T>, id| g.param(store, id);

        let (gamma, beta) = (p(g, self.norm1.0), p(g, self.norm1.1));
        let h = g.layer_norm(x, gamma, beta, LN_EPS)?;
        let h = self.mamba.forward(g, store, h, mode)?;
        let h = g.dropout(h, self.dropout, mode, rng)?;
        let x1 = g.add(x, h)?;

        let (gamma, beta) = (p(g, self.norm2.0), p(g, self.norm2.1));
        let h = g.layer_norm(x1, gamma, beta, LN_EPS)?;
        let (w, b) = (p(g, self.ffn_in.0), p(g, self.ffn_in.1));
        let h = g.linear(h, w, Some(b))?;
        let h = g.activation(h, Activation::Elu)?;
        let h = g.dropout(h, self.dropout, mode, rng)?;
        let (w, b) = (p(g, self.ffn_out.0), p(g, self.ffn_out.1));
        let h = g.linear(h, w, Some(b))?;
        g.add(x1, h)
    }
}

/// `depth` encoder layers applied in sequence.
#[derive(Clone, Debug)]
pub struct EncoderStack {
    pub layers: Vec<EncoderLayer>,
}

impl EncoderStack {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.depth)
            .map(|i| EncoderLayer::new(store, &format!("{prefix}.{i}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn width(&self) -> usize {
        self.layers[0].mamba.cfg.d_model
    }

    pub fn forward<T: Float, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        self.layers.iter().try_fold(x, |h, layer| layer.forward(g, store, h, mode, rng))
    }

    /// Runs both pooled streams through the same parameters, variance
    /// stream first. Gradients from both streams accumulate in the shared
    /// weights.
    pub fn forward_shared<T: Float, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x_var: Var,
        x_avg: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        if g.shape(x_var) != g.shape(x_avg) {
            return Err(Error::shape(
                "encoder",
                format!("stream shapes differ: {:?} vs {:?}", g.shape(x_var), g.shape(x_avg)),
            ));
        }
        let y_var = self.forward(g, store, x_var, mode, rng)?;
        let y_avg = self.forward(g, store, x_avg, mode, rng)?;
        Ok((y_var, y_avg))
    }
}
