use std::borrow::Cow;

use super::graph::{Backward, Graph, Var};
use super::{axpy, dot, gemm, view, view_mut, Float, Tensor};
use crate::error::{Error, Result};

/// Symmetric zero padding and stride per spatial axis, `[height, width]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub pad: [usize; 2],
    pub stride: [usize; 2],
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { pad: [0, 0], stride: [1, 1] }
    }
}

impl Conv2dSpec {
    pub fn padded(pad_h: usize, pad_w: usize) -> Self {
        Self { pad: [pad_h, pad_w], stride: [1, 1] }
    }

    pub fn strided(stride_h: usize, stride_w: usize) -> Self {
        Self { pad: [0, 0], stride: [stride_h, stride_w] }
    }
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    hp: usize,
    wp: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    sh: usize,
    sw: usize,
}

fn out_extent(op: &'static str, padded: usize, k: usize, stride: usize, axis: &str) -> Result<usize> {
    if stride == 0 {
        return Err(Error::arg(op, "stride must be positive"));
    }
    if k > padded {
        return Err(Error::shape(op, format!("kernel {k} exceeds padded {axis} extent {padded}")));
    }
    if !(padded - k).is_multiple_of(stride) {
        return Err(Error::shape(
            op,
            format!("({padded} - {k}) / {stride} is not an integer along {axis}"),
        ));
    }
    Ok((padded - k) / stride + 1)
}

fn geometry<T: Float>(x: &Tensor<T>, w: &Tensor<T>, spec: Conv2dSpec) -> Result<Geometry> {
    if x.rank() != 4 || w.rank() != 4 {
        return Err(Error::shape("conv2d", format!("x {:?}, w {:?} must be rank 4", x.shape(), w.shape())));
    }
    let [batch, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [cout, wcin, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    if wcin != cin {
        return Err(Error::shape("conv2d", format!("input channels {cin} vs weight {:?}", w.shape())));
    }
    let (hp, wp) = (h + 2 * spec.pad[0], wd + 2 * spec.pad[1]);
    let ho = out_extent("conv2d", hp, kh, spec.stride[0], "height")?;
    let wo = out_extent("conv2d", wp, kw, spec.stride[1], "width")?;
    Ok(Geometry { batch, cin, cout, hp, wp, kh, kw, ho, wo, sh: spec.stride[0], sw: spec.stride[1] })
}

fn pad_hw<T: Float>(x: &Tensor<T>, ph: usize, pw: usize) -> Cow<'_, Tensor<T>> {
    if ph == 0 && pw == 0 {
        return Cow::Borrowed(x);
    }
    let [b, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (hp, wp) = (h + 2 * ph, w + 2 * pw);
    let mut out = Tensor::zeros(&[b, c, hp, wp]);
    let od = out.data_mut();
    for plane in 0..b * c {
        for r in 0..h {
            let src = (plane * h + r) * w;
            let dst = (plane * hp + r + ph) * wp + pw;
            od[dst..dst + w].copy_from_slice(&x.data()[src..src + w]);
        }
    }
    Cow::Owned(out)
}

/// 2-D cross-correlation (no kernel flip).
///
/// `x: [B, Ci, H, W]`, `w: [Co, Ci, kh, kw]`, optional `bias: [Co]`.
/// Output extents are `(H + 2 pad - k) / stride + 1` and must be integral.
pub fn conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, spec: Conv2dSpec) -> Result<Tensor<T>> {
    let geo = geometry(x, w, spec)?;
    if let Some(b) = bias {
        if b.shape() != [geo.cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {} outputs", b.shape(), geo.cout)));
        }
    }
    let xp = pad_hw(x, spec.pad[0], spec.pad[1]);
    Ok(conv2d_padded(&xp, w, bias, geo))
}

impl Geometry {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one padded batch item `[Ci, hp, wp]` into `[Ci kh kw, ho wo]`.
fn im2col<T: Float>(xb: &[T], g: &Geometry, col: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.cin {
        let xplane = &xb[ci * g.hp * g.wp..][..g.hp * g.wp];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &mut col[((ci * g.kh + i) * g.kw + j) * p..][..p];
                for oh in 0..g.ho {
                    let xrow = &xplane[(oh * g.sh + i) * g.wp..][..g.wp];
                    let dst = &mut row[oh * g.wo..][..g.wo];
                    if g.sw == 1 {
                        dst.copy_from_slice(&xrow[j..j + g.wo]);
                    } else {
                        for (ow, d) in dst.iter_mut().enumerate() {
                            *d = xrow[ow * g.sw + j];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `col` back into `[Ci, hp, wp]`.
fn col2im<T: Float>(col: &[T], g: &Geometry, xb: &mut [T]) {
    let p = g.positions();
    for ci in 0..g.cin {
        let xplane = &mut xb[ci * g.hp * g.wp..][..g.hp * g.wp];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = &col[((ci * g.kh + i) * g.kw + j) * p..][..p];
                for oh in 0..g.ho {
                    let xrow = &mut xplane[(oh * g.sh + i) * g.wp..][..g.wp];
                    let src = &row[oh * g.wo..][..g.wo];
                    if g.sw == 1 {
                        for (x, &v) in xrow[j..j + g.wo].iter_mut().zip(src) {
                            *x += v;
                        }
                    } else {
                        for (ow, &v) in src.iter().enumerate() {
                            xrow[ow * g.sw + j] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_padded<T: Float>(xp: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>, g: Geometry) -> Tensor<T> {
    let mut out = Tensor::zeros(&[g.batch, g.cout, g.ho, g.wo]);
    let (k, p) = (g.patch(), g.positions());
    let plane_in = g.cin * g.hp * g.wp;
    let mut col = vec![T::zero(); k * p];
    for (b, yb) in out.data_mut().chunks_exact_mut(g.cout * p).enumerate() {
        if let Some(bias) = bias {
            for (plane, &bv) in yb.chunks_exact_mut(p).zip(bias.data()) {
                plane.fill(bv);
            }
        }
        im2col(&xp.data()[b * plane_in..][..plane_in], &g, &mut col);
        gemm(g.cout, k, p, view(w.data(), k, 1), view(&col, p, 1), T::one(), view_mut(yb, p, 1));
    }
    out
}

struct Conv2dOp {
    spec: Conv2dSpec,
    geo: Geometry,
}

impl<T: Float> Backward<T> for Conv2dOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let g = self.geo;
        let xp = pad_hw(x, self.spec.pad[0], self.spec.pad[1]);
        let (wd, gd) = (w.data(), grad.data());
        let (k, p) = (g.patch(), g.positions());
        let plane_in = g.cin * g.hp * g.wp;
        let mut col = vec![T::zero(); k * p];
        let mut gw = needs[1].then(|| Tensor::zeros(w.shape()));
        let mut gxp = needs[0].then(|| Tensor::zeros(&[g.batch, g.cin, g.hp, g.wp]));
        for b in 0..g.batch {
            let gb = &gd[b * g.cout * p..][..g.cout * p];
            if let Some(gw) = gw.as_mut() {
                im2col(&xp.data()[b * plane_in..][..plane_in], &g, &mut col);
                gemm(g.cout, p, k, view(gb, p, 1), view(&col, 1, p), T::one(), view_mut(gw.data_mut(), k, 1));
            }
            if let Some(gxp) = gxp.as_mut() {
                gemm(k, g.cout, p, view(wd, 1, k), view(gb, p, 1), T::zero(), view_mut(&mut col, p, 1));
                col2im(&col, &g, &mut gxp.data_mut()[b * plane_in..][..plane_in]);
            }
        }
        let [ph, pw] = self.spec.pad;
        let gx = match gxp {
            Some(gxp) if ph == 0 && pw == 0 => Some(gxp),
            Some(gxp) => {
                let (h, wdt) = (x.shape()[2], x.shape()[3]);
                Some(gxp.narrow(2, ph, h)?.narrow(3, pw, wdt)?)
            }
            None => None,
        };
        let plane_out = p;

        let mut out = vec![gx, gw];
        if inputs.len() > 2 {
            out.push(needs[2].then(|| {
                let mut gb = Tensor::zeros(&[g.cout]);
                for (bco, plane) in gd.chunks_exact(plane_out).enumerate() {
                    gb.data_mut()[bco % g.cout] += plane.iter().copied().sum::<T>();
                }
                gb
            }));
        }
        Ok(out)
    }
}

/// Depthwise causal convolution along time: `x: [B, D, L]`, `w: [D, k]`.
///
/// `y[b,d,t] = sum_j w[d,j] * x[b,d,t-(k-1)+j]`, with zero history before
/// `t = 0`, so `y[.., t]` depends only on `x[.., ..=t]`.
pub fn causal_conv1d_depthwise<T: Float>(x: &Tensor<T>, w: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 3 || w.rank() != 2 {
        return Err(Error::shape("causal_conv1d", format!("x {:?}, w {:?}", x.shape(), w.shape())));
    }
    let (d, l) = (x.shape()[1], x.shape()[2]);
    let k = w.shape()[1];
    if w.shape()[0] != d {
        return Err(Error::shape("causal_conv1d", format!("{d} channels vs weight {:?}", w.shape())));
    }
    if k == 0 {
        return Err(Error::arg("causal_conv1d", "kernel length must be >= 1"));
    }
    let mut y = Tensor::zeros(x.shape());
    for (row, (yrow, xrow)) in y.data_mut().chunks_exact_mut(l).zip(x.data().chunks_exact(l)).enumerate() {
        let wrow = &w.data()[(row % d) * k..][..k];
        for (j, &wv) in wrow.iter().enumerate() {
            let shift = k - 1 - j;
            if shift < l {
                axpy(wv, &xrow[..l - shift], &mut yrow[shift..]);
            }
        }
    }
    Ok(y)
}

struct CausalConvOp {
    d: usize,
    k: usize,
    l: usize,
}

impl<T: Float> Backward<T> for CausalConvOp {
    fn name(&self) -> &'static str {
        "causal_conv1d"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (d, k, l) = (self.d, self.k, self.l);
        let mut gx = needs[0].then(|| Tensor::zeros(x.shape()));
        let mut gw = needs[1].then(|| Tensor::zeros(w.shape()));
        for (row, (grow, xrow)) in grad.data().chunks_exact(l).zip(x.data().chunks_exact(l)).enumerate() {
            let ch = row % d;
            for j in 0..k {
                let shift = k - 1 - j;
                if shift >= l {
                    continue;
                }
                if let Some(gx) = gx.as_mut() {
                    let wv = w.data()[ch * k + j];
                    axpy(wv, &grow[shift..], &mut gx.data_mut()[row * l..][..l - shift]);
                }
                if let Some(gw) = gw.as_mut() {
                    gw.data_mut()[ch * k + j] += dot(&grow[shift..], &xrow[..l - shift]);
                }
            }
        }
        Ok(vec![gx, gw])
    }
}

impl<T: Float> Graph<T> {
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        let value = conv2d(self.value(x), self.value(w), bias.map(|b| self.value(b)), spec)?;
        let geo = geometry(self.value(x), self.value(w), spec)?;
        let op = Box::new(Conv2dOp { spec, geo });
        match bias {
            Some(b) => self.record(value, &[x, w, b], op),
            None => self.record(value, &[x, w], op),
        }
    }

    pub fn causal_conv1d(&mut self, x: Var, w: Var) -> Result<Var> {
        let value = causal_conv1d_depthwise(self.value(x), self.value(w))?;
        let (d, l) = (self.value(x).shape()[1], self.value(x).shape()[2]);
        let k = self.value(w).shape()[1];
        self.record(value, &[x, w], Box::new(CausalConvOp { d, k, l }))
    }
}
