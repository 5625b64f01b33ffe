use std::collections::{BTreeMap, HashMap};

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Vector-Jacobian product of one recorded operation.
///
/// `inputs` and `output` are the forward values; `grad` is dLoss/dOutput.
/// Returns one entry per input; entries whose `needs` flag is false may be
/// `None`.
pub trait Backward<T: Float> {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Float> {
    value: Tensor<T>,
    requires_grad: bool,
    inputs: Vec<usize>,
    op: Option<Box<dyn Backward<T>>>,
    param: Option<ParamId>,
}

/// Topologically ordered tape of forward operations.
///
/// Nodes are appended in execution order, so iterating indices backwards
/// is a valid reverse topological order. A graph supports exactly one
/// backward pass.
pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
    fault: Option<(String, f64)>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), param_vars: HashMap::new(), consumed: false, fault: None }
    }

    /// Scales every input gradient produced by ops named `op` by `factor`.
    /// Only meant for negative-control checks of the gradient checker.
    pub fn inject_backward_fault(&mut self, op: impl Into<String>, factor: f64) {
        self.fault = Some((op.into(), factor));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, requires_grad, inputs: Vec::new(), op: None, param: None });
        Var(self.nodes.len() - 1)
    }

    /// Registers a trainable parameter. Repeated calls with the same id
    /// return the same leaf, so shared weights accumulate one gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let p = store.get(id);
        self.nodes.push(Node {
            value: p.value.clone(),
            requires_grad: p.requires_grad,
            inputs: Vec::new(),
            op: None,
            param: Some(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Number of distinct parameters registered so far.
    pub fn num_params(&self) -> usize {
        self.param_vars.len()
    }

    /// Appends the result of an operation. The op is retained only if some
    /// input requires a gradient.
    pub fn record(&mut self, value: Tensor<T>, inputs: &[Var], op: Box<dyn Backward<T>>) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            requires_grad,
            inputs: inputs.iter().map(|v| v.0).collect(),
            op: requires_grad.then_some(op),
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::StaleGraph);
        }
        let loss_shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(loss_shape));
        let mut out = Gradients { leaves: HashMap::new(), params: BTreeMap::new() };

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let Some(op) = &node.op else {
                if node.requires_grad {
                    if let Some(pid) = node.param {
                        out.params.insert(pid, g.clone());
                    }
                    out.leaves.insert(id, g);
                }
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let mut input_grads = op.backward(&inputs, &node.value, &g, &needs)?;
            if let Some((name, factor)) = &self.fault {
                if name == op.name() {
                    let f = T::of(*factor);
                    for gi in input_grads.iter_mut().flatten() {
                        gi.data_mut().iter_mut().for_each(|v| *v *= f);
                    }
                }
            }
            for ((&i, gi), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let (Some(gi), true) = (gi, need) else { continue };
                if gi.shape() != self.nodes[i].value.shape() {
                    return Err(Error::shape(
                        op.name(),
                        format!("backward produced {:?} for input {:?}", gi.shape(), self.nodes[i].value.shape()),
                    ));
                }
                match &mut grads[i] {
                    Some(acc) => acc.data_mut().iter_mut().zip(gi.data()).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(gi),
                }
            }
        }
        Ok(out)
    }
}

/// Gradients produced by [`Graph::backward`]: one per differentiable leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    leaves: HashMap<usize, Tensor<T>>,
    params: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Float> Gradients<T> {
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v.0)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Whether decoupled weight decay applies (false for norms and biases).
    pub decay: bool,
    pub requires_grad: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Adds a parameter. Names must be unique within a store.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, decay: bool) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name `{name}`");
        self.params.push(Param { name, value, decay, requires_grad: true });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    decay: p.decay,
                    requires_grad: p.requires_grad,
                })
                .collect(),
        }
    }
}
