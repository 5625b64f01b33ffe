use super::{check_dims, Dims, LaneScanner, ScanMode};
use crate::error::{Error, Result};
use crate::tensor::{axpy, dot, Backward, Float, Graph, Tensor, Var};

/// Per-lane discretization: `a[t,k] = exp(delta_t A_k)` and
/// `beta[t,k] = delta_t Bsel[t,k] u_t`.
#[inline]
fn discretize_lane<T: Float>(arow: &[T], delta: &[T], u: &[T], brows: &[T], a: &mut [T], beta: &mut [T]) {
    let n = arow.len();
    for (t, (&dt, &ut)) in delta.iter().zip(u).enumerate() {
        let span = t * n..(t + 1) * n;
        let du = dt * ut;
        for (((av, bv), &ak), &bk) in a[span.clone()].iter_mut().zip(&mut beta[span.clone()]).zip(arow).zip(&brows[span]) {
            *av = (dt * ak).fast_exp();
            *bv = du * bk;
        }
    }
}

/// Hidden states are not kept; backward recomputes them one lane at a time.
struct SelectiveScanOp {
    dims: Dims,
}

impl<T: Float> Backward<T> for SelectiveScanOp {
    fn name(&self) -> &'static str {
        "selective_scan"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let [u, delta, a, bsel, csel, dskip] = inputs else { unreachable!() };
        let Dims { b, d, l, n } = self.dims;
        let (ud, dd, ad, bd, cd, sd, gy) =
            (u.data(), delta.data(), a.data(), bsel.data(), csel.data(), dskip.data(), grad.data());

        let mut gu = vec![T::zero(); ud.len()];
        let mut gdelta = vec![T::zero(); dd.len()];
        let mut ga = vec![T::zero(); ad.len()];
        let mut gb = vec![T::zero(); bd.len()];
        let mut gc = vec![T::zero(); cd.len()];
        let mut gd = vec![T::zero(); sd.len()];
        let mut gh = vec![T::zero(); l * n];
        let mut ga_pre = vec![T::zero(); n];
        let zeros = vec![T::zero(); n];
        let (mut abl, mut beta, mut hl) = (vec![T::zero(); l * n], vec![T::zero(); l * n], vec![T::zero(); l * n]);
        let mut scanner = LaneScanner::default();

        for bi in 0..b {
            let rows = bi * l * n..(bi + 1) * l * n;
            let (brows, crows) = (&bd[rows.clone()], &cd[rows.clone()]);
            let (gbrows, gcrows) = (&mut gb[rows.clone()], &mut gc[rows]);
            for di in 0..d {
                let lane = (bi * d + di) * l;
                let arow = &ad[di * n..][..n];
                let garow = &mut ga[di * n..][..n];
                discretize_lane(arow, &dd[lane..lane + l], &ud[lane..lane + l], brows, &mut abl, &mut beta);
                scanner.sequential(&abl, &beta, n, &mut hl);
                for t in (0..l).rev() {
                    let g = gy[lane + t];
                    let (ghr, rest) = gh[t * n..].split_at_mut(n);
                    let ct = &crows[t * n..][..n];
                    if t + 1 < l {
                        let next = &abl[(t + 1) * n..][..n];
                        for (((h, &hn), &a), &c) in ghr.iter_mut().zip(&rest[..n]).zip(next).zip(ct) {
                            *h = hn * a + c * g;
                        }
                    } else {
                        for (h, &c) in ghr.iter_mut().zip(ct) {
                            *h = c * g;
                        }
                    }
                }
                for t in 0..l {
                    let (g, ut, dt) = (gy[lane + t], ud[lane + t], dd[lane + t]);
                    gd[di] += g * ut;
                    let row = t * n..(t + 1) * n;
                    let hprev = if t > 0 { &hl[row.start - n..row.start] } else { &zeros[..] };
                    let (ght, at, ht, bt) = (&gh[row.clone()], &abl[row.clone()], &hl[row.clone()], &brows[row.clone()]);
                    axpy(g, ht, &mut gcrows[row.clone()]);
                    axpy(dt * ut, ght, &mut gbrows[row]);
                    for (((p, &gk), &hk), &ak) in ga_pre.iter_mut().zip(ght).zip(hprev).zip(at) {
                        *p = gk * hk * ak;
                    }
                    axpy(dt, &ga_pre, garow);
                    let ghb = dot(ght, bt);
                    gu[lane + t] = sd[di] * g + ghb * dt;
                    gdelta[lane + t] = dot(&ga_pre, arow) + ghb * ut;
                }
            }
        }
        let wrap = |t: &Tensor<T>, v: Vec<T>| Tensor::new(t.shape().to_vec(), v).map(Some);
        Ok(vec![wrap(u, gu)?, wrap(delta, gdelta)?, wrap(a, ga)?, wrap(bsel, gb)?, wrap(csel, gc)?, wrap(dskip, gd)?])
    }
}

impl<T: Float> Graph<T> {
    /// Selective SSM on `u: [B, D, L]` with timesteps `delta: [B, D, L]`,
    /// state matrix `a: [D, N]`, projections `bsel`, `csel: [B, L, N]` and
    /// skip `dskip: [D]`. Discretization and scan are fused into one node.
    #[allow(clippy::too_many_arguments)]
    pub fn selective_scan(
        &mut self,
        u: Var,
        delta: Var,
        a: Var,
        bsel: Var,
        csel: Var,
        dskip: Var,
        mode: ScanMode,
    ) -> Result<Var> {
        let (ut, dt, at, bt, ct, st) =
            (self.value(u), self.value(delta), self.value(a), self.value(bsel), self.value(csel), self.value(dskip));
        let dims = check_dims("selective_scan", at, dt, bt, ct, st)?;
        if ut.shape() != dt.shape() {
            return Err(Error::shape("selective_scan", format!("u {:?} vs delta {:?}", ut.shape(), dt.shape())));
        }
        if let ScanMode::Parallel { chunk: 0 } = mode {
            return Err(Error::arg("selective_scan", "chunk must be >= 1"));
        }
        let Dims { b, d, l, n } = dims;
        let (mut abl, mut beta, mut hl) = (vec![T::zero(); l * n], vec![T::zero(); l * n], vec![T::zero(); l * n]);
        let mut scanner = LaneScanner::default();
        let mut y = Vec::with_capacity(b * d * l);
        for bi in 0..b {
            let brows = &bt.data()[bi * l * n..][..l * n];
            let crows = &ct.data()[bi * l * n..][..l * n];
            for di in 0..d {
                let lane = (bi * d + di) * l;
                let ul = &ut.data()[lane..lane + l];
                discretize_lane(&at.data()[di * n..][..n], &dt.data()[lane..lane + l], ul, brows, &mut abl, &mut beta);
                scanner.run(mode, &abl, &beta, n, &mut hl);
                let skip = st.data()[di];
                for (t, &uv) in ul.iter().enumerate() {
                    let span = t * n..(t + 1) * n;
                    y.push(dot(&hl[span.clone()], &crows[span]) + skip * uv);
                }
            }
        }
        let value = Tensor::new(vec![b, d, l], y)?;
        self.record(value, &[u, delta, a, bsel, csel, dskip], Box::new(SelectiveScanOp { dims }))
    }
}
