use crate::error::{Error, Result};
use crate::tensor::{Backward, Float, Graph, Tensor, Var};

struct CrossEntropyOp<T> {
    /// Row-wise softmax of the logits.
    probs: Vec<T>,
    labels: Vec<usize>,
    classes: usize,
}

impl<T: Float> Backward<T> for CrossEntropyOp<T> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _: &Tensor<T>, grad: &Tensor<T>, _: &[bool]) -> Result<Vec<Option<Tensor<T>>>> {
        let scale = grad.data()[0] / T::of(self.labels.len() as f64);
        let mut g: Vec<T> = self.probs.iter().map(|&p| p * scale).collect();
        for (row, &y) in self.labels.iter().enumerate() {
            g[row * self.classes + y] -= scale;
        }
        Ok(vec![Some(Tensor::new(inputs[0].shape().to_vec(), g)?)])
    }
}

/// Row-wise `log softmax` with the max shifted out, as `f64`.
pub fn log_softmax_row<T: Float>(row: &[T]) -> Vec<f64> {
    let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v.as_f64() - lse).collect()
}

pub(crate) fn check_labels(op: &'static str, labels: &[usize], batch: usize, classes: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(Error::shape(op, format!("{} labels for {batch} rows", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::arg(op, format!("label {y} out of range for {classes} classes")));
    }
    Ok(())
}

impl<T: Float> Graph<T> {
    /// Mean negative log-likelihood of `labels` under `softmax(logits)`,
    /// `logits: [B, K]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.rank() != 2 || z.shape()[0] == 0 {
            return Err(Error::shape("cross_entropy", format!("logits {:?} must be [B, K] with B > 0", z.shape())));
        }
        let (b, k) = (z.shape()[0], z.shape()[1]);
        check_labels("cross_entropy", labels, b, k)?;
        let mut probs = Vec::with_capacity(b * k);
        let mut loss = 0.0;
        for (row, &y) in z.data().chunks_exact(k).zip(labels) {
            let ls = log_softmax_row(row);
            loss -= ls[y];
            probs.extend(ls.iter().map(|&l| T::of(l.exp())));
        }
        let value = Tensor::scalar(T::of(loss / b as f64));
        let op = CrossEntropyOp { probs, labels: labels.to_vec(), classes: k };
        self.record(value, &[logits], Box::new(op))
    }
}
