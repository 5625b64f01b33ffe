//! Dense tensors and the reverse-mode autodiff graph.
//!
//! [`Tensor`] is a plain row-major value (shape + contiguous data).
//! Differentiable computation happens on a [`Graph`], which records each
//! operation together with whatever it needs for the backward pass.
//! Trainable weights live in a [`ParamStore`] and enter a graph as leaves
//! through [`Graph::param`].

mod activation;
mod conv;
mod graph;
pub mod gradcheck;
mod linear;
mod norm;
mod ops;
mod pool;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use activation::{elu, silu, softplus, Activation};
pub use conv::{causal_conv1d_depthwise, conv2d, Conv2dSpec};
pub use linear::linear_values;
pub use graph::{Backward, Graph, Gradients, Param, ParamId, ParamStore, Var};
pub use norm::{BatchNorm, BatchNormStats, NormConfig};
pub use pool::{sliding_pool, PoolKind};

/// Scalar element type. Implemented for `f32` (training) and `f64`
/// (gradient checking).
pub trait Float:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `e^x` for finite `x`. May trade the last few ulps for speed.
    fn fast_exp(self) -> Self;

    /// `e^x - 1` for finite `x`; same accuracy caveat as [`Float::fast_exp`].
    fn fast_exp_m1(self) -> Self;

    /// `c = a b + beta c` for strided matrices. See [`gemm`].
    fn gemm_raw(dims: [usize; 3], a: Strided<Self>, b: Strided<Self>, beta: Self, c: StridedMut<Self>);
}

/// Read-only matrix view: `data[i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct Strided<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

pub struct StridedMut<'a, T> {
    pub data: &'a mut [T],
    pub rs: usize,
    pub cs: usize,
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c[m, n] = a[m, k] b[k, n] + beta c`. Panics if a view is too short.
pub(crate) fn gemm<T: Float>(m: usize, k: usize, n: usize, a: Strided<T>, b: Strided<T>, beta: T, c: StridedMut<T>) {
    assert!(span(m, k, a.rs, a.cs) <= a.data.len(), "gemm: lhs view out of bounds");
    assert!(span(k, n, b.rs, b.cs) <= b.data.len(), "gemm: rhs view out of bounds");
    assert!(span(m, n, c.rs, c.cs) <= c.data.len(), "gemm: output view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    T::gemm_raw([m, k, n], a, b, beta, c);
}

pub(crate) fn view<T>(data: &[T], rs: usize, cs: usize) -> Strided<'_, T> {
    Strided { data, rs, cs }
}

pub(crate) fn view_mut<T>(data: &mut [T], rs: usize, cs: usize) -> StridedMut<'_, T> {
    StridedMut { data, rs, cs }
}

macro_rules! gemm_impl {
    ($f:path) => {
        fn gemm_raw([m, k, n]: [usize; 3], a: Strided<Self>, b: Strided<Self>, beta: Self, c: StridedMut<Self>) {
            // SAFETY: `gemm` checked every view covers its strided extent.
            unsafe {
                $f(
                    m,
                    k,
                    n,
                    1.0,
                    a.data.as_ptr(),
                    a.rs as isize,
                    a.cs as isize,
                    b.data.as_ptr(),
                    b.rs as isize,
                    b.cs as isize,
                    beta,
                    c.data.as_mut_ptr(),
                    c.rs as isize,
                    c.cs as isize,
                )
            }
        }
    };
}

impl Float for f32 {
    const NAME: &'static str = "f32";

    gemm_impl!(matrixmultiply::sgemm);

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    /// Branch-free Cephes-style `expf` so loops over it vectorize.
    #[inline]
    fn fast_exp(self) -> Self {
        const LOG2E: f32 = std::f32::consts::LOG2_E;
        const LN2_HI: f32 = 0.693_359_4;
        const LN2_LO: f32 = -2.121_944_4e-4;
        let x = self.clamp(-87.3, 88.0);
        const ROUND: f32 = 12_582_912.0;
        let shifted = x * LOG2E + ROUND;
        let n = shifted - ROUND;
        let r = x - n * LN2_HI - n * LN2_LO;
        let mut p = 1.987_569_1e-4f32;
        p = p * r + 1.398_199_9e-3;
        p = p * r + 8.333_452e-3;
        p = p * r + 4.166_579_6e-2;
        p = p * r + 1.666_666_5e-1;
        p = p * r + 5e-1;
        let y = p * r * r + r + 1.0;
        let bias = shifted.to_bits().wrapping_sub(ROUND.to_bits()).wrapping_add(127);
        y * f32::from_bits(bias << 23)
    }

    #[inline]
    fn fast_exp_m1(self) -> Self {
        if self.abs() < 1e-2 {
            self.exp_m1()
        } else {
            self.fast_exp() - 1.0
        }
    }
}

impl Float for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn fast_exp(self) -> Self {
        self.exp()
    }

    #[inline]
    fn fast_exp_m1(self) -> Self {
        self.exp_m1()
    }

    gemm_impl!(matrixmultiply::dgemm);
}

/// Train/infer switch shared by every layer with mode-dependent behavior
/// (batch norm, dropout, scan selection).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " {:?}..", &self.data[..SHOWN])
        }
    }
}

impl<T: Float> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) && !data.is_empty() {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?} with data")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    /// Builds a tensor by evaluating `f` at each flat (row-major) index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(f).collect() }
    }

    /// Independent draws from `U(-bound, bound)`.
    pub fn uniform<R: rand::Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| T::of(rng.random_range(-bound..=bound)))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?} changes element count", self.shape, shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn cast<U: Float>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index.iter().zip(&self.shape).fold(0, |acc, (&i, &d)| {
            debug_assert!(i < d);
            acc * d + i
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Largest absolute elementwise difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs()))
    }

    /// `max|self - reference| / max|reference|`.
    pub fn rel_err(&self, reference: &Self) -> f64 {
        let scale = reference.max_abs().as_f64().max(f64::MIN_POSITIVE);
        self.max_abs_diff(reference).as_f64() / scale
    }

    /// Permutes axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::arg("permute", format!("{axes:?} is not a permutation of rank {rank}")));
        }
        let in_strides = strides(&self.shape);
        let out_shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.numel());
        if self.numel() > 0 {
            let last = rank - 1;
            let inner = out_shape[last];
            let inner_stride = src_strides[last];
            let mut idx = vec![0usize; rank];
            loop {
                let base: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
                data.extend((0..inner).map(|k| self.data[base + k * inner_stride]));
                // advance all but the last axis
                let mut ax = last;
                loop {
                    if ax == 0 {
                        return Tensor::new(out_shape, data);
                    }
                    ax -= 1;
                    idx[ax] += 1;
                    if idx[ax] < out_shape[ax] {
                        break;
                    }
                    idx[ax] = 0;
                }
            }
        }
        Tensor::new(out_shape, data)
    }

    /// Takes `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        if axis >= self.rank() || start + len > self.shape[axis] || len == 0 {
            return Err(Error::arg(
                "narrow",
                format!("axis {axis} range {start}..{} out of {:?}", start + len, self.shape),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let extent = self.shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&self.data[base..base + len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::new(shape, data)
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[&Self], axis: usize) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::arg("concat", "no inputs"))?;
        if axis >= first.rank() {
            return Err(Error::arg("concat", format!("axis {axis} >= rank {}", first.rank())));
        }
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape.iter().zip(&first.shape).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(Error::shape("concat", format!("{:?} vs {:?} on axis {axis}", p.shape, first.shape)));
            }
        }
        let outer: usize = first.shape[..axis].iter().product();
        let inner: usize = first.shape[axis + 1..].iter().product();
        let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Tensor::new(shape, data)
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize it. Summation order is fixed, so results are deterministic.
#[inline]
pub(crate) fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha * x`
#[inline]
pub(crate) fn axpy<T: Float>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}
