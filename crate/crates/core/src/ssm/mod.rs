//! Diagonal selective state-space models.
//!
//! Shapes used throughout: batch `B`, channels `D`, sequence length `L`,
//! state size `N`. Discretized coefficients are laid out `[B, D, L, N]`,
//! the selective projections `Bsel`/`Csel` are `[B, L, N]` (shared across
//! channels) and inputs/outputs are `[B, D, L]`.

mod mamba;
mod op;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{dot, Float, Tensor};

pub use mamba::{MambaBlock, MambaConfig};

/// Which recurrence evaluation strategy to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    Sequential,
    /// Chunked associative scan; `chunk` is the number of steps each chunk
    /// scans locally before chunk carries are combined.
    Parallel { chunk: usize },
}

/// Continuous-time parameters of a selective SSM for one batch.
#[derive(Clone, Debug)]
pub struct SsmParams<T> {
    /// `[D, N]`, strictly negative.
    pub a: Tensor<T>,
    /// `[B, D, L]`, strictly positive.
    pub delta: Tensor<T>,
    pub bsel: Tensor<T>,
    pub csel: Tensor<T>,
    /// `[D]`
    pub dskip: Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims {
    pub b: usize,
    pub d: usize,
    pub l: usize,
    pub n: usize,
}

impl<T: Float> SsmParams<T> {
    pub(crate) fn dims(&self) -> Result<Dims> {
        check_dims("ssm", &self.a, &self.delta, &self.bsel, &self.csel, &self.dskip)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        if self.a.data().iter().any(|&v| !(v < T::zero())) {
            return Err(Error::arg("ssm", "A must be strictly negative"));
        }
        if self.delta.data().iter().any(|&v| !(v > T::zero())) {
            return Err(Error::arg("ssm", "delta must be strictly positive"));
        }
        Ok(())
    }

    pub fn discretize(&self) -> Result<(Tensor<T>, Tensor<T>)> {
        discretize_zoh(&self.a, &self.delta, &self.bsel)
    }

    /// Runs the full selective SSM on `x: [B, D, L]`.
    pub fn apply(&self, x: &Tensor<T>, mode: ScanMode) -> Result<Tensor<T>> {
        let (abar, bbar) = self.discretize()?;
        match mode {
            ScanMode::Sequential => scan_sequential(&abar, &bbar, &self.csel, x, &self.dskip),
            ScanMode::Parallel { chunk } => scan_parallel(&abar, &bbar, &self.csel, x, &self.dskip, chunk),
        }
    }
}

fn check_dims<T: Float>(
    op: &'static str,
    a: &Tensor<T>,
    delta: &Tensor<T>,
    bsel: &Tensor<T>,
    csel: &Tensor<T>,
    dskip: &Tensor<T>,
) -> Result<Dims> {
    if a.rank() != 2 || delta.rank() != 3 {
        return Err(Error::shape(op, format!("A {:?}, delta {:?}", a.shape(), delta.shape())));
    }
    let (d, n) = (a.shape()[0], a.shape()[1]);
    let (b, l) = (delta.shape()[0], delta.shape()[2]);
    if delta.shape()[1] != d {
        return Err(Error::shape(op, format!("delta {:?} vs A {:?}", delta.shape(), a.shape())));
    }
    for (name, t) in [("Bsel", bsel), ("Csel", csel)] {
        if t.shape() != [b, l, n] {
            return Err(Error::shape(op, format!("{name} {:?}, expected {:?}", t.shape(), [b, l, n])));
        }
    }
    if dskip.shape() != [d] {
        return Err(Error::shape(op, format!("Dskip {:?} for {d} channels", dskip.shape())));
    }
    Ok(Dims { b, d, l, n })
}

/// Discretizes `A` and `Bsel` at timesteps `delta`:
/// `Abar = exp(delta * A)`, `Bbar = delta * Bsel`, both `[B, D, L, N]`.
pub fn discretize_zoh<T: Float>(a: &Tensor<T>, delta: &Tensor<T>, bsel: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if a.rank() != 2 || delta.rank() != 3 || bsel.rank() != 3 {
        return Err(Error::shape(
            "discretize",
            format!("A {:?}, delta {:?}, Bsel {:?}", a.shape(), delta.shape(), bsel.shape()),
        ));
    }
    let (d, n) = (a.shape()[0], a.shape()[1]);
    let (b, l) = (delta.shape()[0], delta.shape()[2]);
    if delta.shape()[1] != d || bsel.shape() != [b, l, n] {
        return Err(Error::shape(
            "discretize",
            format!("A {:?}, delta {:?}, Bsel {:?}", a.shape(), delta.shape(), bsel.shape()),
        ));
    }
    if let Some(bad) = delta.data().iter().find(|&&v| !(v > T::zero())) {
        return Err(Error::arg("discretize", format!("delta must be positive, got {bad}")));
    }
    let mut abar = Vec::with_capacity(b * d * l * n);
    let mut bbar = Vec::with_capacity(b * d * l * n);
    for bi in 0..b {
        for di in 0..d {
            let arow = &a.data()[di * n..][..n];
            for t in 0..l {
                let dt = delta.data()[(bi * d + di) * l + t];
                let brow = &bsel.data()[(bi * l + t) * n..][..n];
                abar.extend(arow.iter().map(|&av| (dt * av).exp()));
                bbar.extend(brow.iter().map(|&bv| dt * bv));
            }
        }
    }
    let shape = vec![b, d, l, n];
    Ok((Tensor::new(shape.clone(), abar)?, Tensor::new(shape, bbar)?))
}

fn check_scan_inputs<T: Float>(
    abar: &Tensor<T>,
    bbar: &Tensor<T>,
    csel: &Tensor<T>,
    x: &Tensor<T>,
    dskip: &Tensor<T>,
) -> Result<Dims> {
    if abar.rank() != 4 || x.rank() != 3 {
        return Err(Error::shape("scan", format!("Abar {:?}, x {:?}", abar.shape(), x.shape())));
    }
    let s = abar.shape();
    let dims = Dims { b: s[0], d: s[1], l: s[2], n: s[3] };
    if bbar.shape() != s {
        return Err(Error::shape("scan", format!("Bbar {:?} vs Abar {:?}", bbar.shape(), s)));
    }
    if x.shape() != [dims.b, dims.d, dims.l] {
        return Err(Error::shape("scan", format!("x {:?} vs Abar {:?}", x.shape(), s)));
    }
    if csel.shape() != [dims.b, dims.l, dims.n] {
        return Err(Error::shape("scan", format!("Csel {:?} vs Abar {:?}", csel.shape(), s)));
    }
    if dskip.shape() != [dims.d] {
        return Err(Error::shape("scan", format!("Dskip {:?} for {} channels", dskip.shape(), dims.d)));
    }
    Ok(dims)
}

/// Reusable buffers for scanning one `(b, d)` lane at a time. Lane inputs
/// `a` and `beta` hold `L * N` values (time-major); on return `h` holds
/// every state `h_t`.
#[derive(Default)]
pub(crate) struct LaneScanner<T> {
    prev: Vec<T>,
    a_loc: Vec<T>,
    agg: Vec<(T, T)>,
}

impl<T: Float> LaneScanner<T> {
    pub(crate) fn run(&mut self, mode: ScanMode, a: &[T], beta: &[T], n: usize, h: &mut [T]) {
        match mode {
            ScanMode::Sequential => self.sequential(a, beta, n, h),
            ScanMode::Parallel { chunk } => self.parallel(a, beta, n, chunk, h),
        }
    }

    pub(crate) fn sequential(&mut self, a: &[T], beta: &[T], n: usize, h: &mut [T]) {
        self.prev.clear();
        self.prev.resize(n, T::zero());
        let prev = &mut self.prev[..n];
        for ((at, bt), ht) in a.chunks_exact(n).zip(beta.chunks_exact(n)).zip(h.chunks_exact_mut(n)) {
            for k in 0..n {
                prev[k] = at[k] * prev[k] + bt[k];
            }
            ht.copy_from_slice(prev);
        }
    }

    /// Chunked associative scan. Each chunk is scanned locally from a zero
    /// state, chunk aggregates are combined with a work-efficient exclusive
    /// scan, and the resulting carries are folded back in.
    pub(crate) fn parallel(&mut self, a: &[T], beta: &[T], n: usize, chunk: usize, h: &mut [T]) {
        let l = a.len() / n;
        let n_chunks = l.div_ceil(chunk);
        let width = n_chunks.next_power_of_two();
        self.a_loc.resize(l, T::zero());
        for k in 0..n {
            self.agg.clear();
            for c in 0..n_chunks {
                let (mut pa, mut pb) = (T::one(), T::zero());
                for t in c * chunk..((c + 1) * chunk).min(l) {
                    let i = t * n + k;
                    (pa, pb) = combine((pa, pb), (a[i], beta[i]));
                    self.a_loc[t] = pa;
                    h[i] = pb;
                }
                self.agg.push((pa, pb));
            }
            self.agg.resize(width, (T::one(), T::zero()));
            blelloch_exclusive(&mut self.agg);
            for c in 1..n_chunks {
                let carry = self.agg[c].1;
                for t in c * chunk..((c + 1) * chunk).min(l) {
                    let i = t * n + k;
                    h[i] = self.a_loc[t] * carry + h[i];
                }
            }
        }
    }
}

/// `(a1, b1)` then `(a2, b2)`: the map `h -> a2 (a1 h + b1) + b2`.
#[inline]
fn combine<T: Float>(first: (T, T), second: (T, T)) -> (T, T) {
    (second.0 * first.0, second.0 * first.1 + second.1)
}

/// In-place exclusive scan under [`combine`]; `xs.len()` must be a power of two.
fn blelloch_exclusive<T: Float>(xs: &mut [(T, T)]) {
    let len = xs.len();
    let mut stride = 1;
    while stride < len {
        for right in (2 * stride - 1..len).step_by(2 * stride) {
            xs[right] = combine(xs[right - stride], xs[right]);
        }
        stride *= 2;
    }
    xs[len - 1] = (T::one(), T::zero());
    while stride > 1 {
        stride /= 2;
        for right in (2 * stride - 1..len).step_by(2 * stride) {
            let left = xs[right - stride];
            xs[right - stride] = xs[right];
            xs[right] = combine(xs[right], left);
        }
    }
}

fn scan_impl<T: Float>(
    abar: &Tensor<T>,
    bbar: &Tensor<T>,
    csel: &Tensor<T>,
    x: &Tensor<T>,
    dskip: &Tensor<T>,
    mode: ScanMode,
) -> Result<Tensor<T>> {
    let dims = check_scan_inputs(abar, bbar, csel, x, dskip)?;
    let Dims { b, d, l, n } = dims;
    let (mut beta, mut h) = (vec![T::zero(); l * n], vec![T::zero(); l * n]);
    let mut scanner = LaneScanner::default();
    let mut y = Vec::with_capacity(b * d * l);
    for lane in 0..b * d {
        let span = lane * l * n..(lane + 1) * l * n;
        let xl = &x.data()[lane * l..][..l];
        for ((row, brow), &xv) in beta.chunks_exact_mut(n.max(1)).zip(bbar.data()[span.clone()].chunks_exact(n.max(1))).zip(xl) {
            row.iter_mut().zip(brow).for_each(|(v, &bv)| *v = bv * xv);
        }
        scanner.run(mode, &abar.data()[span], &beta, n, &mut h);
        let crows = &csel.data()[(lane / d) * l * n..][..l * n];
        let skip = dskip.data()[lane % d];
        for (t, &xv) in xl.iter().enumerate() {
            let row = t * n..(t + 1) * n;
            y.push(dot(&h[row.clone()], &crows[row]) + skip * xv);
        }
    }
    Tensor::new(vec![b, d, l], y)
}

/// Recurrent evaluation: `h_t = Abar_t h_{t-1} + Bbar_t x_t`, `h_{-1} = 0`,
/// `y_t = <Csel_t, h_t> + Dskip x_t`.
pub fn scan_sequential<T: Float>(
    abar: &Tensor<T>,
    bbar: &Tensor<T>,
    csel: &Tensor<T>,
    x: &Tensor<T>,
    dskip: &Tensor<T>,
) -> Result<Tensor<T>> {
    scan_impl(abar, bbar, csel, x, dskip, ScanMode::Sequential)
}

/// Same result as [`scan_sequential`] computed with a chunked associative
/// scan. Deterministic for a fixed `chunk`.
pub fn scan_parallel<T: Float>(
    abar: &Tensor<T>,
    bbar: &Tensor<T>,
    csel: &Tensor<T>,
    x: &Tensor<T>,
    dskip: &Tensor<T>,
    chunk: usize,
) -> Result<Tensor<T>> {
    if chunk == 0 {
        return Err(Error::arg("scan_parallel", "chunk must be >= 1"));
    }
    scan_impl(abar, bbar, csel, x, dskip, ScanMode::Parallel { chunk })
}

/// Materializes the convolution kernel of a time-invariant SSM:
/// `K[d, t] = <C, Abar_d^t Bbar_d>` for `t < len`.
///
/// `abar`/`bbar` are `[B, D, L, N]` and `c` is `[B, L, N]`; every batch and
/// time slice must hold the same values, otherwise the system has no
/// single kernel and [`Error::TimeVarying`] is returned.
pub fn ssm_kernel_lti<T: Float>(abar: &Tensor<T>, bbar: &Tensor<T>, c: &Tensor<T>, len: usize) -> Result<Tensor<T>> {
    if abar.rank() != 4 || bbar.shape() != abar.shape() {
        return Err(Error::shape("ssm_kernel", format!("Abar {:?}, Bbar {:?}", abar.shape(), bbar.shape())));
    }
    let s = abar.shape();
    let (b, d, l, n) = (s[0], s[1], s[2], s[3]);
    if c.shape() != [b, l, n] {
        return Err(Error::shape("ssm_kernel", format!("C {:?} vs Abar {:?}", c.shape(), s)));
    }
    if b == 0 || l == 0 {
        return Err(Error::shape("ssm_kernel", "empty batch or sequence"));
    }
    let invariant = |t: &Tensor<T>, row: usize, what: &str| -> Result<()> {
        let first = &t.data()[..row];
        if t.data().chunks_exact(row).all(|r| r == first) {
            Ok(())
        } else {
            Err(Error::TimeVarying(format!("{what} differs across batch or time")))
        }
    };
    invariant(c, n, "C")?;
    for (t, name) in [(abar, "Abar"), (bbar, "Bbar")] {
        for bi in 0..b {
            for di in 0..d {
                let lane = &t.data()[(bi * d + di) * l * n..][..l * n];
                let reference = &t.data()[di * l * n..][..n];
                if lane.chunks_exact(n).any(|r| r != reference) {
                    return Err(Error::TimeVarying(format!("{name} differs across batch or time")));
                }
            }
        }
    }
    let cv = &c.data()[..n];
    let mut k = Vec::with_capacity(d * len);
    for di in 0..d {
        let av = &abar.data()[di * l * n..][..n];
        let mut p = bbar.data()[di * l * n..][..n].to_vec();
        for _ in 0..len {
            k.push(p.iter().zip(cv).map(|(&pv, &cv)| pv * cv).sum());
            p.iter_mut().zip(av).for_each(|(pv, &a)| *pv *= a);
        }
    }
    Tensor::new(vec![d, len], k)
}

/// Causal per-channel convolution with a materialized kernel plus the skip
/// term: `y[b,d,t] = sum_{s<=t} K[d,t-s] x[b,d,s] + Dskip[d] x[b,d,t]`.
pub fn lti_convolve<T: Float>(x: &Tensor<T>, kernel: &Tensor<T>, dskip: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 || kernel.rank() != 2 {
        return Err(Error::shape("lti_convolve", format!("x {:?}, K {:?}", x.shape(), kernel.shape())));
    }
    let (d, l) = (x.shape()[1], x.shape()[2]);
    if kernel.shape()[0] != d || kernel.shape()[1] < l || dskip.shape() != [d] {
        return Err(Error::shape(
            "lti_convolve",
            format!("x {:?}, K {:?}, Dskip {:?}", x.shape(), kernel.shape(), dskip.shape()),
        ));
    }
    let klen = kernel.shape()[1];
    let mut y = vec![T::zero(); x.numel()];
    for (lane, (yl, xl)) in y.chunks_exact_mut(l.max(1)).zip(x.data().chunks_exact(l.max(1))).enumerate() {
        let di = lane % d;
        let kr = &kernel.data()[di * klen..][..klen];
        for t in 0..l {
            let mut acc = dskip.data()[di] * xl[t];
            for s in 0..=t {
                acc += kr[t - s] * xl[s];
            }
            yl[t] = acc;
        }
    }
    Tensor::new(x.shape().to_vec(), y)
}
