use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScanMode;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Float, Graph, Mode, ParamId, ParamStore, Tensor, Var};

const CONV_KERNEL: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MambaConfig {
    pub d_model: usize,
    pub d_state: usize,
    pub expand: usize,
    /// Rank of the timestep projection; `ceil(d_model / 16)` by default.
    pub dt_rank: usize,
    pub conv_kernel: usize,
    /// Permits `conv_kernel != 4`.
    #[serde(default)]
    pub conv_override: bool,
    pub dt_min: f64,
    pub dt_max: f64,
    /// Scan used in train mode; infer mode always scans sequentially.
    pub train_scan: ScanMode,
}

impl MambaConfig {
    pub fn new(d_model: usize) -> Self {
        Self {
            d_model,
            d_state: 16,
            expand: 2,
            dt_rank: d_model.div_ceil(16),
            conv_kernel: CONV_KERNEL,
            conv_override: false,
            dt_min: 1e-3,
            dt_max: 0.1,
            train_scan: ScanMode::Sequential,
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.expand == 0 || self.dt_rank == 0 {
            return Err(Error::Config("mamba widths must be positive".into()));
        }
        if self.conv_kernel != CONV_KERNEL && !self.conv_override {
            return Err(Error::Config(format!(
                "mamba conv kernel is fixed at {CONV_KERNEL}; got {} without override",
                self.conv_kernel
            )));
        }
        if self.conv_kernel == 0 {
            return Err(Error::Config("conv kernel must be >= 1".into()));
        }
        if !(0.0 < self.dt_min && self.dt_min <= self.dt_max) {
            return Err(Error::Config(format!("bad timestep range [{}, {}]", self.dt_min, self.dt_max)));
        }
        if let ScanMode::Parallel { chunk: 0 } = self.train_scan {
            return Err(Error::Config("scan chunk must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gated selective-SSM block mapping `[B, L, D] -> [B, L, D]`.
#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub cfg: MambaConfig,
    pub in_proj: ParamId,
    pub conv: ParamId,
    pub x_proj: ParamId,
    pub dt_proj: ParamId,
    pub dt_bias: ParamId,
    pub a_log: ParamId,
    pub d_skip: ParamId,
    pub out_proj: ParamId,
}

/// Inverse of softplus: `x` such that `softplus(x) = y`.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl MambaBlock {
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cfg: MambaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (d, e, n, r, k) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.dt_rank, cfg.conv_kernel);
        let fan = |f: usize| 1.0 / (f as f64).sqrt();
        let in_proj = store.add(format!("{prefix}.in_proj"), Tensor::uniform(&[2 * e, d], fan(d), rng), true);
        let conv = store.add(format!("{prefix}.conv"), Tensor::uniform(&[e, k], fan(k), rng), true);
        let x_proj = store.add(format!("{prefix}.x_proj"), Tensor::uniform(&[r + 2 * n, e], fan(e), rng), true);
        let dt_proj = store.add(format!("{prefix}.dt_proj"), Tensor::uniform(&[e, r], fan(r), rng), true);
        let (lo, hi) = (cfg.dt_min.ln(), cfg.dt_max.ln());
        let bias = Tensor::from_fn(&[e], |_| T::of(inv_softplus(rng.random_range(lo..=hi).exp())));
        let dt_bias = store.add(format!("{prefix}.dt_bias"), bias, false);
        let a_log = store.add(format!("{prefix}.a_log"), Tensor::from_fn(&[e, n], |i| T::of(((i % n) as f64 + 1.0).ln())), false);
        let d_skip = store.add(format!("{prefix}.d_skip"), Tensor::ones(&[e]), false);
        let out_proj = store.add(format!("{prefix}.out_proj"), Tensor::uniform(&[d, e], fan(e), rng), true);
        Ok(Self { cfg, in_proj, conv, x_proj, dt_proj, dt_bias, a_log, d_skip, out_proj })
    }

    pub fn forward<T: Float>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.cfg.d_model {
            return Err(Error::shape("mamba", format!("input {shape:?} for width {}", self.cfg.d_model)));
        }
        let (e, n, r) = (self.cfg.d_inner(), self.cfg.d_state, self.cfg.dt_rank);
        let p = |g: &mut Graph<T>, id| g.param(store, id);

        let w_in = p(g, self.in_proj);
        let xz = g.linear(x, w_in, None)?;
        let u = g.narrow(xz, 2, 0, e)?;
        let gate = g.narrow(xz, 2, e, e)?;

        let u = g.transpose12(u)?;
        let w_conv = p(g, self.conv);
        let u = g.causal_conv1d(u, w_conv)?;
        let u = g.activation(u, Activation::Silu)?;

        let u_tokens = g.transpose12(u)?;
        let w_x = p(g, self.x_proj);
        let proj = g.linear(u_tokens, w_x, None)?;
        let dt = g.narrow(proj, 2, 0, r)?;
        let bsel = g.narrow(proj, 2, r, n)?;
        let csel = g.narrow(proj, 2, r + n, n)?;

        let (w_dt, b_dt) = (p(g, self.dt_proj), p(g, self.dt_bias));
        let dt = g.linear(dt, w_dt, Some(b_dt))?;
        let delta = g.activation(dt, Activation::Softplus)?;
        let delta = g.transpose12(delta)?;

        let a_log = p(g, self.a_log);
        let a = g.activation(a_log, Activation::Exp)?;
        let a = g.scale(a, -1.0)?;
        let d_skip = p(g, self.d_skip);
        let scan = match mode {
            Mode::Train => self.cfg.train_scan,
            Mode::Infer => ScanMode::Sequential,
        };
        let y = g.selective_scan(u, delta, a, bsel, csel, d_skip, scan)?;
        let y = g.transpose12(y)?;

        let gate = g.activation(gate, Activation::Silu)?;
        let y = g.mul(y, gate)?;
        let w_out = p(g, self.out_proj);
        g.linear(y, w_out, None)
    }
}
