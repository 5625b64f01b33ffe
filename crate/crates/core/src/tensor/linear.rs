use rand::Rng;

use super::graph::{Backward, Graph, Var};
use super::{gemm, view, view_mut, Float, Mode, Tensor};
use crate::error::{Error, Result};

struct LinearOp {
    rows: usize,
    din: usize,
    dout: usize,
}

impl<T: Float> Backward<T> for LinearOp {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, needs: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let (x, w) = (inputs[0], inputs[1]);
        let (rows, din, dout) = (self.rows, self.din, self.dout);
        let (xd, wd, gd) = (x.data(), w.data(), grad.data());

        let gx = needs[0].then(|| {
            let mut gx = Tensor::zeros(x.shape());
            gemm(rows, dout, din, view(gd, dout, 1), view(wd, din, 1), T::zero(), view_mut(gx.data_mut(), din, 1));
            gx
        });
        let gw = needs[1].then(|| {
            let mut gw = Tensor::zeros(w.shape());
            gemm(dout, rows, din, view(gd, 1, dout), view(xd, din, 1), T::zero(), view_mut(gw.data_mut(), din, 1));
            gw
        });
        let mut result = vec![gx, gw];
        if inputs.len() > 2 {
            result.push(needs[2].then(|| {
                let mut gb = Tensor::zeros(&[dout]);
                let out = gb.data_mut();
                for n in 0..rows {
                    for o in 0..dout {
                        out[o] += gd[n * dout + o];
                    }
                }
                gb
            }));
        }
        Ok(result)
    }
}

struct DropoutOp<T> {
    mask: Vec<T>,
}

impl<T: Float> Backward<T> for DropoutOp<T> {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let data = grad.data().iter().zip(&self.mask).map(|(&g, &m)| g * m).collect();
        Ok(vec![Some(Tensor::new(grad.shape().to_vec(), data)?)])
    }
}

/// Affine map over the last axis: `y = x w^T + b`.
pub fn linear_values<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if w.rank() != 2 || x.rank() == 0 {
        return Err(Error::shape("linear", format!("x {:?}, w {:?}", x.shape(), w.shape())));
    }
    let (dout, din) = (w.shape()[0], w.shape()[1]);
    if *x.shape().last().unwrap() != din {
        return Err(Error::shape("linear", format!("input width {:?} vs weight {:?}", x.shape(), w.shape())));
    }
    if let Some(b) = b {
        if b.shape() != [dout] {
            return Err(Error::shape("linear", format!("bias {:?} for {dout} outputs", b.shape())));
        }
    }
    let rows = x.numel() / din;
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = dout;
    let mut y = match b {
        Some(b) => b.data().repeat(rows),
        None => vec![T::zero(); rows * dout],
    };
    let beta = if b.is_some() { T::one() } else { T::zero() };
    gemm(rows, din, dout, view(x.data(), din, 1), view(w.data(), 1, din), beta, view_mut(&mut y, dout, 1));
    Tensor::new(out_shape, y)
}

impl<T: Float> Graph<T> {
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let value = linear_values(self.value(x), self.value(w), b.map(|b| self.value(b)))?;
        let wt = self.value(w);
        let (dout, din) = (wt.shape()[0], wt.shape()[1]);
        let rows = self.value(x).numel() / din;
        let op = Box::new(LinearOp { rows, din, dout });
        match b {
            Some(b) => self.record(value, &[x, w, b], op),
            None => self.record(value, &[x, w], op),
        }
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Identity in
    /// infer mode or when `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::arg("dropout", format!("rate {p} outside [0, 1)")));
        }
        if mode == Mode::Infer || p == 0.0 {
            return Ok(x);
        }
        let keep = T::of(1.0 / (1.0 - p));
        let xt = self.value(x);
        let mask: Vec<T> = (0..xt.numel()).map(|_| if rng.random::<f64>() < p { T::zero() } else { keep }).collect();
        let data = xt.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(xt.shape().to_vec(), data)?;
        self.record(value, &[x], Box::new(DropoutOp { mask }))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::gradcheck::{grad_check, FnObjective};
    use crate::tensor::ParamStore;

    #[test]
    fn identity_weights() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 3], |i| i as f64 * 0.5 - 4.0);
        let w = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let b = Tensor::zeros(&[3]);
        assert_eq!(linear_values(&x, &w, Some(&b)).unwrap(), x);
    }

    #[test]
    fn hand_arithmetic() {
        let x = Tensor::<f64>::from_f64(&[2], &[1.0, 1.0]).unwrap();
        let w = Tensor::from_f64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_f64(&[2], &[0.0, 1.0]).unwrap();
        assert_eq!(linear_values(&x, &w, Some(&b)).unwrap().data(), &[3.0, 8.0]);
    }

    #[test]
    fn inner_dimension_mismatch() {
        let x = Tensor::<f64>::zeros(&[4, 3]);
        let w = Tensor::zeros(&[2, 4]);
        assert!(matches!(linear_values(&x, &w, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn gradients_wrt_x_w_b() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::from_fn(&[2, 3, 5], |i| (i as f64 * 0.71).sin()), false);
        let w = store.add("w", Tensor::from_fn(&[4, 5], |i| (i as f64 * 0.37).cos()), true);
        let b = store.add("b", Tensor::from_fn(&[4], |i| 0.2 * i as f64), false);
        let mut obj = FnObjective::new(store, move |g, s| {
            let (xv, wv, bv) = (g.param(s, x), g.param(s, w), g.param(s, b));
            let y = g.linear(xv, wv, Some(bv))?;
            let y2 = g.activation(y, crate::tensor::Activation::Silu)?;
            g.sum(y2)
        });
        let r = grad_check(&mut obj, 1e-5, 1e-4, None).unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::from_fn(&[10], |i| i as f32));
        assert_eq!(g.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.9, Mode::Infer, &mut rng).unwrap(), x);
        assert!(g.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::<f64>::new();
        let n = 200_000;
        let xt = Tensor::from_fn(&[n], |i| 1.0 + (i % 7) as f64);
        let x = g.input(xt.clone());
        let y = g.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let yt = g.value(y);
        let zeroed = yt.data().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
        assert!((zeroed - 0.5).abs() < 0.02);
        let (mx, my) = (xt.sum() / n as f64, yt.sum() / n as f64);
        assert!(((my - mx) / mx).abs() < 0.02);
    }
}
