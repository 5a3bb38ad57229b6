use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Element, Tensor};

/// Handle to a value recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Inputs to an adjoint: the forward input values, the forward output and the
/// upstream gradient (same layout as `output`).
pub struct BackwardArgs<'a, T> {
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    pub grad: &'a [T],
}

/// Adjoint of one recorded operation. Returns one gradient per input, `None`
/// where the input receives no gradient.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Execution record for one forward pass.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    training: bool,
    pub(crate) rng: ChaCha8Rng,
}

impl<T: Element> Graph<T> {
    /// `training` enables dropout and stochastic depth; `seed` drives their masks.
    pub fn new(training: bool, seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn inference() -> Self {
        Self::new(false, 0)
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: "leaf",
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation with a caller-supplied adjoint.
    pub fn custom(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var {
        self.record(op, inputs, value, backward)
    }

    pub(crate) fn record(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            backward: requires_grad.then_some(backward),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse pass from a scalar `loss`.
    ///
    /// Each recorded operation on a path to `loss` is visited once, in reverse
    /// execution order.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(
            self.nodes[loss.0].value.numel(),
            1,
            "backward requires a scalar loss"
        );
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut visited = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            let inputs: Vec<&Tensor<T>> =
                node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let input_grads = backward(&BackwardArgs {
                inputs: &inputs,
                output: &node.value,
                grad: &grad,
            });
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    g.len(),
                    self.nodes[input].value.numel(),
                    "gradient size mismatch from {}",
                    node.op
                );
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
            }
            // Leaves keep their gradient; intermediates were taken above.
        }

        Gradients { grads, visited }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    visited: Vec<usize>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Node indices whose adjoints ran, in the order they ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}
