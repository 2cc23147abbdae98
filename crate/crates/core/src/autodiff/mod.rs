//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! All learnable computations in this crate (convolution, pooled line
//! descriptors, graph convolution, Sinkhorn iterations, losses) are built
//! from the primitives in [`ops`]. A [`Tape`] records one forward pass;
//! [`Tape::backward`] replays it in reverse and accumulates gradients for
//! every recorded value that requires them.
//!
//! The engine is deliberately small: values are `ndarray::ArrayD<f64>`,
//! nodes are appended in topological order, and each op stores a closure
//! producing the gradients of its inputs. Dropping the tape frees the
//! whole graph; nothing is shared between passes.

use std::cell::{Ref, RefCell};

use ndarray::ArrayD;

pub mod gradcheck;
pub mod ops;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

/// Inputs available to a node's backward closure.
pub struct BackwardCtx<'a> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a ArrayD<f64>,
    /// This node's forward value.
    pub out: &'a ArrayD<f64>,
    /// Forward values of the node's parents, in recording order.
    pub inputs: Vec<&'a ArrayD<f64>>,
    /// Which parents actually need a gradient.
    pub needs: Vec<bool>,
}

type GradFn = Box<dyn Fn(&BackwardCtx) -> Vec<Option<ArrayD<f64>>>>;

struct Node {
    value: ArrayD<f64>,
    parents: Vec<usize>,
    grad_fn: Option<GradFn>,
    requires_grad: bool,
}

/// Records one forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
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

    /// Record a leaf value. Parameters pass `requires_grad = true`,
    /// plain data (images, masks, marginals) `false`.
    pub fn leaf(&self, value: ArrayD<f64>, requires_grad: bool) -> Var {
        self.push(Node {
            value,
            parents: Vec::new(),
            grad_fn: None,
            requires_grad,
        })
    }

    /// Convenience for a non-differentiable constant.
    pub fn constant(&self, value: ArrayD<f64>) -> Var {
        self.leaf(value, false)
    }

    /// Borrow the forward value of `v`.
    pub fn value(&self, v: Var) -> Ref<'_, ArrayD<f64>> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[v.id].value)
    }

    /// Clone the forward value of `v`.
    pub fn value_owned(&self, v: Var) -> ArrayD<f64> {
        self.nodes.borrow()[v.id].value.clone()
    }

    /// Scalar value of a 0-d (or single-element) variable.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let arr = &nodes[v.id].value;
        debug_assert_eq!(arr.len(), 1, "scalar() on non-scalar value");
        *arr.iter().next().expect("empty value")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    fn push(&self, node: Node) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn record(
        &self,
        value: ArrayD<f64>,
        parents: Vec<Var>,
        grad_fn: GradFn,
    ) -> Var {
        let nodes = self.nodes.borrow();
        let requires_grad = parents.iter().any(|p| nodes[p.id].requires_grad);
        drop(nodes);
        self.push(Node {
            value,
            parents: parents.into_iter().map(|p| p.id).collect(),
            grad_fn: if requires_grad { Some(grad_fn) } else { None },
            requires_grad,
        })
    }

    /// Run reverse accumulation from a scalar `root`.
    ///
    /// Returns gradients for every variable that received one; query with
    /// [`Gradients::get`]. Nodes recorded after `root` are ignored.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let root_val = &nodes[root.id].value;
        assert_eq!(
            root_val.len(),
            1,
            "backward root must be scalar, got shape {:?}",
            root_val.shape()
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(ArrayD::ones(root_val.raw_dim()));

        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[id].take() else {
                continue;
            };
            if let Some(grad_fn) = &node.grad_fn {
                let inputs: Vec<&ArrayD<f64>> =
                    node.parents.iter().map(|&p| &nodes[p].value).collect();
                let needs: Vec<bool> = node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect();
                let ctx = BackwardCtx {
                    grad: &grad,
                    out: &node.value,
                    inputs,
                    needs,
                };
                let parent_grads = grad_fn(&ctx);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    if let Some(pg) = pg {
                        if !nodes[pid].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(
                            pg.shape(),
                            nodes[pid].value.shape(),
                            "gradient shape mismatch for parent {pid}"
                        );
                        match &mut grads[pid] {
                            Some(acc) => *acc += &pg,
                            slot @ None => *slot = Some(pg),
                        }
                    }
                }
            }
            grads[id] = Some(grad);
        }
        Gradients { grads }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape if none flowed.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> ArrayD<f64> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(ndarray::IxDyn(shape)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn leaf_values_round_trip() {
        let tape = Tape::new();
        let a = tape.leaf(arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn(), true);
        assert_eq!(tape.value(a).shape(), &[2, 2]);
        assert_eq!(tape.value(a)[[0, 1]], 2.0);
        assert!(tape.requires_grad(a));
    }

    #[test]
    fn constants_do_not_accumulate() {
        let tape = Tape::new();
        let a = tape.leaf(arr2(&[[2.0]]).into_dyn(), true);
        let c = tape.constant(arr2(&[[3.0]]).into_dyn());
        let prod = tape.mul(a, c);
        let s = tape.sum_all(prod);
        let grads = tape.backward(s);
        assert_eq!(grads.get(a).unwrap()[[0, 0]], 3.0);
        assert!(grads.get(c).is_none());
    }

    #[test]
    #[should_panic(expected = "scalar")]
    fn backward_rejects_non_scalar_root() {
        let tape = Tape::new();
        let a = tape.leaf(arr2(&[[1.0, 2.0]]).into_dyn(), true);
        tape.backward(a);
    }
}
