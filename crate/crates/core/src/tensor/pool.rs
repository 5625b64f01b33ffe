use serde::{Deserialize, Serialize};

use super::graph::{Backward, Graph, Var};
use super::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Avg,
    /// Population variance of the window, clamped at zero.
    Var,
}

fn pooled_len(len: usize, window: usize, stride: usize) -> Result<usize> {
    if window == 0 || stride == 0 {
        return Err(Error::arg("sliding_pool", "window and stride must be positive"));
    }
    if window > len {
        return Err(Error::shape("sliding_pool", format!("window {window} longer than signal {len}")));
    }
    if !(len - window).is_multiple_of(stride) {
        return Err(Error::shape(
            "sliding_pool",
            format!("({len} - {window}) / {stride} is not an integer"),
        ));
    }
    Ok((len - window) / stride + 1)
}

/// Per-window statistics: `(mean, variance)` with variance from the
/// mean-of-squares identity on values shifted by the window's first sample.
#[inline]
fn window_stats<T: Float>(w: &[T]) -> (T, T, bool) {
    let x0 = w[0];
    let n = T::of(w.len() as f64);
    let (mut s1, mut s2) = (T::zero(), T::zero());
    for &v in w {
        let d = v - x0;
        s1 += d;
        s2 += d * d;
    }
    let m1 = s1 / n;
    let raw = s2 / n - m1 * m1;
    let clamped = raw < T::zero();
    (x0 + m1, if clamped { T::zero() } else { raw }, clamped)
}

/// Sliding average or variance over the last axis of `x`.
///
/// For `x: [B, C, 1, L]` the output is `[B, C, 1, L']` with
/// `L' = (L - window) / stride + 1`, which must be integral.
pub fn sliding_pool<T: Float>(x: &Tensor<T>, kind: PoolKind, window: usize, stride: usize) -> Result<Tensor<T>> {
    Ok(pool_with_stats(x, kind, window, stride)?.0)
}

fn pool_with_stats<T: Float>(
    x: &Tensor<T>,
    kind: PoolKind,
    window: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<T>, Vec<bool>)> {
    let len = *x.shape().last().ok_or_else(|| Error::shape("sliding_pool", "rank-0 input"))?;
    let out_len = pooled_len(len, window, stride)?;
    let rows = x.numel() / len;
    let mut out = Vec::with_capacity(rows * out_len);
    let mut means = Vec::with_capacity(rows * out_len);
    let mut clamped = Vec::new();
    for row in x.data().chunks_exact(len) {
        for o in 0..out_len {
            let (m, v, c) = window_stats(&row[o * stride..o * stride + window]);
            means.push(m);
            match kind {
                PoolKind::Avg => out.push(m),
                PoolKind::Var => {
                    out.push(v);
                    clamped.push(c);
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_len;
    Ok((Tensor::new(shape, out)?, means, clamped))
}

struct PoolOp<T> {
    kind: PoolKind,
    window: usize,
    stride: usize,
    means: Vec<T>,
    clamped: Vec<bool>,
}

impl<T: Float> Backward<T> for PoolOp<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            PoolKind::Avg => "avg_pool",
            PoolKind::Var => "var_pool",
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let len = *x.shape().last().unwrap();
        let out_len = *grad.shape().last().unwrap();
        let n = T::of(self.window as f64);
        let two = T::of(2.0);
        let mut gx = Tensor::zeros(x.shape());
        for (r, (gxrow, xrow)) in gx.data_mut().chunks_exact_mut(len).zip(x.data().chunks_exact(len)).enumerate() {
            for o in 0..out_len {
                let k = r * out_len + o;
                let g = grad.data()[k];
                let start = o * self.stride;
                let span = start..start + self.window;
                match self.kind {
                    PoolKind::Avg => gxrow[span].iter_mut().for_each(|v| *v += g / n),
                    PoolKind::Var => {
                        if self.clamped[k] {
                            continue;
                        }
                        let m = self.means[k];
                        for (gv, &xv) in gxrow[span.clone()].iter_mut().zip(&xrow[span]) {
                            *gv += g * two * (xv - m) / n;
                        }
                    }
                }
            }
        }
        Ok(vec![Some(gx)])
    }
}

impl<T: Float> Graph<T> {
    pub fn sliding_pool(&mut self, x: Var, kind: PoolKind, window: usize, stride: usize) -> Result<Var> {
        let (value, means, clamped) = pool_with_stats(self.value(x), kind, window, stride)?;
        self.record(value, &[x], Box::new(PoolOp { kind, window, stride, means, clamped }))
    }
}
