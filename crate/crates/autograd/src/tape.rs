//! Define-by-run gradient tape.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::param::{ParamId, ParamKind, ParamStore};
use crate::tensor::Tensor;

/// Inputs handed to a node's backward closure.
pub struct BackwardArgs<'a> {
    pub grad: &'a Tensor,
    pub inputs: Vec<&'a Tensor>,
    pub output: &'a Tensor,
    pub needs: Vec<bool>,
}

pub type BackwardFn = Box<dyn Fn(&BackwardArgs<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Rc<Tensor>,
    parents: Vec<usize>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
    updates: RefCell<Vec<(ParamId, Tensor)>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf holding data. `requires_grad` leaves collect gradients (used for inputs
    /// whose sensitivity is being measured); everything else is a constant.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push_node(Node {
            value: Rc::new(value),
            parents: vec![],
            backward: None,
            requires_grad,
        })
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    /// Binds a stored parameter. Repeated calls within one tape return the same node,
    /// so a weight used twice accumulates both gradient contributions.
    pub fn param(&self, store: &ParamStore, id: ParamId, trainable: bool) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let requires_grad = trainable && store.entry(id).kind == ParamKind::Weight;
        let var = self.push_node(Node {
            value: store.shared(id),
            parents: vec![],
            backward: None,
            requires_grad,
        });
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Records a new value computed from `parents`. The closure is kept only if
    /// some parent participates in differentiation.
    pub fn push<'a>(&'a self, value: Tensor, parents: &[Var<'a>], backward: BackwardFn) -> Var<'a> {
        let nodes = self.nodes.borrow();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        drop(nodes);
        self.push_node(Node {
            value: Rc::new(value),
            parents: parents.iter().map(|p| p.id).collect(),
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        })
    }

    fn push_node(&self, node: Node) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Queue a buffer overwrite (batch-norm running statistics) to be applied after the step.
    pub fn record_update(&self, id: ParamId, value: Tensor) {
        self.updates.borrow_mut().push((id, value));
    }

    pub fn take_updates(&self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut *self.updates.borrow_mut())
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        let n = loss.id + 1;
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        let root = &nodes[loss.id];
        assert_eq!(root.value.len(), 1, "backward() needs a scalar loss");
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..n).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node.parents.iter().map(|&p| nodes[p].requires_grad).collect();
            let args = BackwardArgs {
                grad: &grad,
                inputs: node.parents.iter().map(|&p| nodes[p].value.as_ref()).collect(),
                output: &node.value,
                needs: needs.clone(),
            };
            let parent_grads = backward(&args);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let Some(g) = g else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[p].value.shape(), "gradient shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let mut params = HashMap::new();
        for (pid, &node) in self.params.borrow().iter() {
            if node < n {
                if let Some(g) = grads[node].take() {
                    params.insert(*pid, g);
                }
            }
        }
        Gradients { nodes: grads, params }
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Tensor>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(&id)
    }

    /// Gradient with respect to a leaf created by [`Tape::leaf`].
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.nodes.get(var.id).and_then(|g| g.as_ref())
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params.iter().map(|(k, v)| (*k, v))
    }

    pub fn scale_params(&mut self, ids: &[ParamId], factor: f64) {
        for id in ids {
            if let Some(g) = self.params.get_mut(id) {
                g.scale(factor);
            }
        }
    }
}
