//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records one node per differentiable operation. Each node keeps
//! the indices of its inputs and a closure mapping the output gradient to
//! input gradients. [`Graph::backward`] replays the tape in reverse.
//!
//! With recording disabled ([`Graph::inference`]) no closures are stored and
//! intermediate values are freed as soon as the last [`Var`] referencing them
//! is dropped, which keeps whole-image inference within memory.

mod ops;
mod spatial;

pub use spatial::ResizePlan;
pub(crate) use ops::softmax_in_place;
pub(crate) use spatial::reflect_index;

use crate::scalar::Scalar;
use crate::tensor::Tensor;
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

/// Input-gradient closure: receives the output gradient and, per input,
/// whether that input needs a gradient.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    /// A recording graph.
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            recording: true,
        }
    }

    /// A graph that records nothing; `backward` yields no gradients.
    pub fn inference() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// A differentiable leaf.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf_rc(Rc::new(value))
    }

    pub(crate) fn leaf_rc(&self, value: Rc<Tensor<T>>) -> Var<'_, T> {
        let id = if self.recording {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                parents: Vec::new(),
                backward: None,
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var {
            graph: self,
            id,
            value,
        }
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            graph: self,
            id: None,
            value: Rc::new(value),
        }
    }

    /// Records an operation. `backward` is only stored when some input is
    /// tracked.
    pub(crate) fn record<'g>(
        &'g self,
        value: Tensor<T>,
        inputs: &[&Var<'g, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Var<'g, T> {
        let tracked = self.recording && inputs.iter().any(|v| v.id.is_some());
        let id = if tracked {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                parents: inputs.iter().map(|v| v.id).collect(),
                backward: Some(Box::new(backward)),
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var {
            graph: self,
            id,
            value: Rc::new(value),
        }
    }

    /// Reverse pass from a scalar output. Consumes the recorded closures.
    pub fn backward(&self, output: &Var<'_, T>) -> Gradients<T> {
        let mut leaf_grads = HashMap::new();
        let Some(root) = output.id else {
            return Gradients { grads: leaf_grads };
        };
        assert_eq!(output.value.len(), 1, "backward needs a scalar output");
        let mut nodes = self.nodes.borrow_mut();
        let mut pending: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        pending[root] = Some(Tensor::ones(output.value.shape().to_vec()));
        for i in (0..=root).rev() {
            let Some(grad) = pending[i].take() else {
                continue;
            };
            let node = &mut nodes[i];
            match node.backward.take() {
                None => {
                    leaf_grads.insert(i, grad);
                }
                Some(bw) => {
                    let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
                    let input_grads = bw(&grad, &needs);
                    debug_assert_eq!(input_grads.len(), node.parents.len());
                    for (parent, g) in node.parents.iter().zip(input_grads) {
                        if let (Some(p), Some(g)) = (parent, g) {
                            match &mut pending[*p] {
                                Some(acc) => acc.add_assign(&g),
                                slot @ None => *slot = Some(g),
                            }
                        }
                    }
                }
            }
        }
        Gradients { grads: leaf_grads }
    }
}

/// Gradients of leaves, keyed by the leaf's tape index.
pub struct Gradients<T> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.id.and_then(|id| self.grads.get(&id))
    }

    /// Gradient of a leaf, zeros if it did not influence the output.
    pub fn wrt(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.shape().to_vec()))
    }
}

/// A value on a [`Graph`].
#[derive(Clone)]
pub struct Var<'g, T: Scalar> {
    graph: &'g Graph<T>,
    id: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        Var {
            graph: self.graph,
            id: None,
            value: Rc::clone(&self.value),
        }
    }

    pub fn into_value(self) -> Tensor<T> {
        Rc::try_unwrap(self.value).unwrap_or_else(|rc| (*rc).clone())
    }

    pub fn scalar(&self) -> T {
        assert_eq!(self.value.len(), 1);
        self.value.data()[0]
    }
}

#[cfg(test)]
pub(crate) mod testing {
    //! Central finite differences against the tape, used by op unit tests.
    use super::*;

    /// Checks d(sum(w * f(inputs)))/d(inputs) against central differences.
    pub fn check_op(
        inputs: Vec<Tensor<f64>>,
        f: impl for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Var<'g, f64>,
        tol: f64,
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let probe = {
            let g = Graph::inference();
            let vars: Vec<_> = inputs.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&g, &vars);
            Tensor::<f64>::uniform(out.shape().to_vec(), -1.0, 1.0, &mut rng)
        };
        let eval = |ins: &[Tensor<f64>]| -> f64 {
            let g = Graph::inference();
            let vars: Vec<_> = ins.iter().map(|t| g.constant(t.clone())).collect();
            let out = f(&g, &vars);
            out.value()
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let g = Graph::new();
        let vars: Vec<_> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = f(&g, &vars);
        let loss = out.mul(&g.constant(probe.clone())).sum_all();
        let grads = g.backward(&loss);
        let h = 1e-5;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.wrt(&vars[k]);
            for i in 0..input.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let a = analytic.data()[i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    err < tol,
                    "input {k} elem {i}: analytic {a} vs numeric {numeric} (rel {err})"
                );
            }
        }
    }
}
