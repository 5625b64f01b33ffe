use serde::{Deserialize, Serialize};

use super::graph::{Backward, Graph, Var};
use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `x` for `x >= 0`, `e^x - 1` otherwise.
    Elu,
    /// `x * sigmoid(x)`.
    Silu,
    /// `ln(1 + e^x)`, evaluated without overflow.
    Softplus,
    Sigmoid,
    Exp,
}

#[inline]
pub fn elu<T: Float>(x: T) -> T {
    if x >= T::zero() {
        x
    } else {
        x.fast_exp_m1()
    }
}

#[inline]
fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).fast_exp())
}

#[inline]
pub fn silu<T: Float>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn softplus<T: Float>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl Activation {
    pub fn apply<T: Float>(self, x: T) -> T {
        match self {
            Activation::Elu => elu(x),
            Activation::Silu => silu(x),
            Activation::Softplus => softplus(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Exp => x.fast_exp(),
        }
    }

    /// Derivative at `x`, given the forward output `y`.
    fn derivative<T: Float>(self, x: T, y: T) -> T {
        match self {
            Activation::Elu => {
                if x >= T::zero() {
                    T::one()
                } else {
                    y + T::one()
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s * (T::one() + x * (T::one() - s))
            }
            Activation::Softplus => sigmoid(x),
            Activation::Sigmoid => y * (T::one() - y),
            Activation::Exp => y,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Silu => "silu",
            Activation::Softplus => "softplus",
            Activation::Sigmoid => "sigmoid",
            Activation::Exp => "exp",
        }
    }
}

struct UnaryOp(Activation);

impl<T: Float> Backward<T> for UnaryOp {
    fn name(&self) -> &'static str {
        self.0.name()
    }

    fn backward(&self, inputs: &[&Tensor<T>], output: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(output.data())
            .zip(grad.data())
            .map(|((&x, &y), &g)| g * self.0.derivative(x, y))
            .collect();
        Ok(vec![Some(Tensor::new(grad.shape().to_vec(), data)?)])
    }
}

struct SoftmaxOp {
    axis: usize,
}

fn axis_layout(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Float> Backward<T> for SoftmaxOp {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, _: &[&Tensor<T>], y: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (outer, n, inner) = axis_layout(y.shape(), self.axis);
        let mut gx = Tensor::zeros(y.shape());
        let (yd, gd) = (y.data(), grad.data());
        let out = gx.data_mut();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |k: usize| (o * n + k) * inner + i;
                let s: T = (0..n).map(|k| gd[idx(k)] * yd[idx(k)]).sum();
                for k in 0..n {
                    out[idx(k)] = yd[idx(k)] * (gd[idx(k)] - s);
                }
            }
        }
        Ok(vec![Some(gx)])
    }
}

/// Numerically stable softmax along `axis` (max-shifted).
pub(crate) fn softmax_values<T: Float>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, n, inner) = axis_layout(x.shape(), axis);
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    let out = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |k: usize| (o * n + k) * inner + i;
            let m = (0..n).map(|k| xd[idx(k)]).fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for k in 0..n {
                let e = (xd[idx(k)] - m).exp();
                out[idx(k)] = e;
                z += e;
            }
            for k in 0..n {
                out[idx(k)] /= z;
            }
        }
    }
    y
}

impl<T: Float> Graph<T> {
    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let value = self.value(x).map(|v| kind.apply(v));
        self.record(value, &[x], Box::new(UnaryOp(kind)))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xt = self.value(x);
        if axis >= xt.rank() {
            return Err(Error::arg("softmax", format!("axis {axis} >= rank {}", xt.rank())));
        }
        let value = softmax_values(xt, axis);
        self.record(value, &[x], Box::new(SoftmaxOp { axis }))
    }
}
