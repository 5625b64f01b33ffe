//! Elementwise arithmetic, reductions and shape manipulation.

use super::graph::{Backward, Graph, Var};
use super::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

struct BinaryOp(Binary);

impl<T: Float> Backward<T> for BinaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        }
    }

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let (a, b) = (inputs[0], inputs[1]);
        Ok(match self.0 {
            Binary::Add => vec![needs[0].then(|| grad.clone()), needs[1].then(|| grad.clone())],
            Binary::Sub => vec![needs[0].then(|| grad.clone()), needs[1].then(|| grad.map(|g| -g))],
            Binary::Mul => vec![
                needs[0].then(|| zip(grad, b, |g, y| g * y)),
                needs[1].then(|| zip(grad, a, |g, x| g * x)),
            ],
        })
    }
}

fn zip<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip preserves shape")
}

struct ScaleOp<T>(T);

impl<T: Float> Backward<T> for ScaleOp<T> {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let s = self.0;
        Ok(vec![Some(grad.map(|g| g * s))])
    }
}

struct ShiftOp;

impl<T: Float> Backward<T> for ShiftOp {
    fn name(&self) -> &'static str {
        "add_scalar"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(grad.clone())])
    }
}

struct SumOp {
    mean: bool,
}

impl<T: Float> Backward<T> for SumOp {
    fn name(&self) -> &'static str {
        if self.mean {
            "mean"
        } else {
            "sum"
        }
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let mut g = grad.data()[0];
        if self.mean {
            g /= T::of(x.numel() as f64);
        }
        Ok(vec![Some(Tensor::full(x.shape(), g))])
    }
}

struct ReshapeOp;

impl<T: Float> Backward<T> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(grad.clone().reshape(inputs[0].shape())?)])
    }
}

struct PermuteOp {
    inverse: Vec<usize>,
}

impl<T: Float> Backward<T> for PermuteOp {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(grad.permute(&self.inverse)?)])
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
}

impl<T: Float> Backward<T> for NarrowOp {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let x = inputs[0];
        let axis = self.axis;
        let outer: usize = x.shape()[..axis].iter().product();
        let inner: usize = x.shape()[axis + 1..].iter().product();
        let extent = x.shape()[axis];
        let len = grad.shape()[axis];
        let mut gx = Tensor::zeros(x.shape());
        let gd = gx.data_mut();
        for o in 0..outer {
            let dst = (o * extent + self.start) * inner;
            let src = o * len * inner;
            gd[dst..dst + len * inner].copy_from_slice(&grad.data()[src..src + len * inner]);
        }
        Ok(vec![Some(gx)])
    }
}

struct ConcatOp {
    axis: usize,
}

impl<T: Float> Backward<T> for ConcatOp {
    fn name(&self) -> &'static str {
        "concat"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let mut start = 0;
        let mut out = Vec::with_capacity(inputs.len());
        for (x, &need) in inputs.iter().zip(needs) {
            let len = x.shape()[self.axis];
            out.push(if need { Some(grad.narrow(self.axis, start, len)?) } else { None });
            start += len;
        }
        Ok(out)
    }
}

impl<T: Float> Graph<T> {
    fn binary(&mut self, a: Var, b: Var, kind: Binary) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::shape("elementwise", format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        let value = match kind {
            Binary::Add => zip(x, y, |p, q| p + q),
            Binary::Sub => zip(x, y, |p, q| p - q),
            Binary::Mul => zip(x, y, |p, q| p * q),
        };
        self.record(value, &[a, b], Box::new(BinaryOp(kind)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        let value = self.value(a).map(|v| v * s);
        self.record(value, &[a], Box::new(ScaleOp(s)))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let c = T::of(c);
        let value = self.value(a).map(|v| v + c);
        self.record(value, &[a], Box::new(ShiftOp))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.record(value, &[a], Box::new(SumOp { mean: false }))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let value = Tensor::scalar(x.sum() / T::of(x.numel() as f64));
        self.record(value, &[a], Box::new(SumOp { mean: true }))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        self.record(value, &[a], Box::new(ReshapeOp))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let value = self.value(a).permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        self.record(value, &[a], Box::new(PermuteOp { inverse }))
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose12(&mut self, a: Var) -> Result<Var> {
        self.permute(a, &[0, 2, 1])
    }

    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).narrow(axis, start, len)?;
        self.record(value, &[a], Box::new(NarrowOp { axis, start }))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat(&values, axis)?;
        self.record(value, parts, Box::new(ConcatOp { axis }))
    }
}
