//! Central finite-difference oracle for reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, ParamStore, Var};
use super::Tensor;
use crate::error::Result;

/// Something whose scalar output can be re-evaluated after perturbing its
/// parameters.
pub trait Objective {
    fn params(&mut self) -> &mut ParamStore<f64>;
    fn eval(&mut self, graph: &mut Graph<f64>) -> Result<Var>;
}

/// Closure-backed [`Objective`].
pub struct FnObjective<F> {
    store: ParamStore<f64>,
    f: F,
}

impl<F> FnObjective<F>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    pub fn new(store: ParamStore<f64>, f: F) -> Self {
        Self { store, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>,
{
    fn params(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }

    fn eval(&mut self, graph: &mut Graph<f64>) -> Result<Var> {
        (self.f)(graph, &self.store)
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    /// max |analytic - numeric| / max(1, |numeric|) over checked entries.
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tol)
    }
}

fn loss_value<O: Objective>(obj: &mut O) -> Result<f64> {
    let mut g = Graph::new();
    let loss = obj.eval(&mut g)?;
    Ok(g.value(loss).data()[0])
}

/// Compares reverse-mode gradients of every parameter with central
/// differences of step `h`.
///
/// `sample = Some((n, seed))` checks `n` randomly chosen scalar entries
/// across all parameters instead of every entry.
pub fn grad_check<O: Objective>(
    obj: &mut O,
    h: f64,
    tol: f64,
    sample_spec: Option<(usize, u64)>,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let loss = obj.eval(&mut g)?;
    let grads = g.backward(loss)?;

    let store = obj.params();
    let analytic: Vec<Tensor<f64>> = store
        .iter()
        .map(|(id, p)| grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape())))
        .collect();
    let sizes: Vec<usize> = store.iter().map(|(_, p)| p.value.numel()).collect();
    let names: Vec<String> = store.iter().map(|(_, p)| p.name.clone()).collect();
    let ids: Vec<_> = store.ids().collect();

    let total: usize = sizes.iter().sum();
    let coords: Vec<usize> = match sample_spec {
        Some((n, seed)) if n < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut c = sample(&mut rng, total, n).into_vec();
            c.sort_unstable();
            c
        }
        _ => (0..total).collect(),
    };

    let mut params: Vec<ParamCheck> =
        names.into_iter().map(|name| ParamCheck { name, checked: 0, max_rel_err: 0.0 }).collect();
    let mut offsets = Vec::with_capacity(sizes.len());
    let mut acc = 0;
    for s in &sizes {
        offsets.push(acc);
        acc += s;
    }

    for flat in coords {
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        let k = flat - offsets[pi];
        let id = ids[pi];
        let orig = obj.params().value(id).data()[k];
        obj.params().value_mut(id).data_mut()[k] = orig + h;
        let lp = loss_value(obj)?;
        obj.params().value_mut(id).data_mut()[k] = orig - h;
        let lm = loss_value(obj)?;
        obj.params().value_mut(id).data_mut()[k] = orig;

        let numeric = (lp - lm) / (2.0 * h);
        let err = (analytic[pi].data()[k] - numeric).abs() / numeric.abs().max(1.0);
        let entry = &mut params[pi];
        entry.checked += 1;
        entry.max_rel_err = entry.max_rel_err.max(err);
    }
    params.retain(|p| p.checked > 0);
    Ok(GradCheckReport { tol, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Backward;

    fn linear_objective(fault: Option<f64>) -> impl Objective {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin()), false);
        let w = store.add("w", Tensor::from_fn(&[2, 4], |i| (i as f64 * 0.61).cos()), true);
        let b = store.add("b", Tensor::from_fn(&[2], |i| i as f64 * 0.1), false);
        FnObjective::new(store, move |g, s| {
            if let Some(f) = fault {
                g.inject_backward_fault("linear", f);
            }
            let (xv, wv, bv) = (g.param(s, x), g.param(s, w), g.param(s, b));
            let y = g.linear(xv, wv, Some(bv))?;
            let sq = g.mul(y, y)?;
            g.sum(sq)
        })
    }

    #[test]
    fn linear_layer_passes_tight_tolerance() {
        let report = grad_check(&mut linear_objective(None), 1e-5, 1e-6, None).unwrap();
        assert_eq!(report.params.len(), 3);
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn corrupted_backward_fails() {
        let report = grad_check(&mut linear_objective(Some(1.01)), 1e-5, 1e-6, None).unwrap();
        assert!(!report.passed());
        assert!(report.max_rel_err() > 1e-3);
    }

    struct WrongSquare;

    impl Backward<f64> for WrongSquare {
        fn name(&self) -> &'static str {
            "wrong_square"
        }

        fn backward(
            &self,
            inputs: &[&Tensor<f64>],
            _: &Tensor<f64>,
            grad: &Tensor<f64>,
            _: &[bool],
        ) -> Result<Vec<Option<Tensor<f64>>>> {
            // correct would be 2x; off by 1%
            let x = inputs[0];
            let d = x.data().iter().zip(grad.data()).map(|(x, g)| 2.02 * x * g).collect();
            Ok(vec![Some(Tensor::new(x.shape().to_vec(), d).map_err(|_| Error::StaleGraph)?)])
        }
    }

    #[test]
    fn custom_op_with_wrong_vjp_is_caught() {
        let mut store = ParamStore::<f64>::new();
        let x = store.add("x", Tensor::from_fn(&[5], |i| i as f64 - 2.0), false);
        let mut obj = FnObjective::new(store, move |g, s| {
            let xv = g.param(s, x);
            let y = g.value(xv).map(|v| v * v);
            let yv = g.record(y, &[xv], Box::new(WrongSquare))?;
            g.sum(yv)
        });
        assert!(!grad_check(&mut obj, 1e-5, 1e-6, None).unwrap().passed());
    }

    #[test]
    fn sampling_checks_requested_count() {
        let report = grad_check(&mut linear_objective(None), 1e-5, 1e-6, Some((5, 3))).unwrap();
        assert_eq!(report.params.iter().map(|p| p.checked).sum::<usize>(), 5);
    }
}
