use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// Implementations keep whatever forward state they need (saved statistics,
/// argmax indices, layer specs). `backward` receives the values of the
/// operation's inputs, its output value and the gradient flowing into the
/// output, and returns one optional gradient per input, in input order.
pub trait Function: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f32]) -> Vec<Option<Vec<f32>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn Function>>,
    /// Full-precision value of a scalar reduction.
    exact: Option<f64>,
}

/// An execution tape. Single-threaded; build one graph per concurrent probe.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf holding `tensor`, keeping its `requires_grad` flag.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        self.nodes.push(Node {
            value: tensor,
            inputs: Vec::new(),
            op: None,
            exact: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf whose gradient will be tracked.
    pub fn param(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(true);
        self.leaf(tensor)
    }

    /// Adds a leaf that never receives a gradient.
    pub fn constant(&mut self, mut tensor: Tensor) -> Var {
        tensor.set_requires_grad(false);
        self.leaf(tensor)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// A one-element value as `f64`, using the unrounded result when the
    /// node is a reduction.
    pub fn scalar_f64(&self, var: Var) -> Result<f64> {
        let node = &self.nodes[var.0];
        match node.exact {
            Some(v) => Ok(v),
            None => Ok(f64::from(node.value.item()?)),
        }
    }

    pub(crate) fn set_exact(&mut self, var: Var, value: f64) {
        self.nodes[var.0].exact = Some(value);
    }

    /// Accumulated gradient of a leaf, if backward reached it.
    pub fn grad(&self, var: Var) -> Option<&[f32]> {
        self.nodes[var.0].value.grad()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].value.requires_grad()
    }

    /// Clears every leaf gradient.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.zero_grad();
        }
    }

    /// Records the result of an operation. The backward rule is dropped when
    /// none of the inputs needs a gradient, so inference graphs keep no
    /// saved state.
    pub fn record(&mut self, mut value: Tensor, inputs: &[Var], op: impl Function + 'static) -> Var {
        let tracked = inputs.iter().any(|v| self.requires_grad(*v));
        value.set_requires_grad(tracked);
        value.zero_grad();
        self.nodes.push(Node {
            value,
            inputs: if tracked { inputs.to_vec() } else { Vec::new() },
            op: if tracked { Some(Box::new(op)) } else { None },
            exact: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Backpropagates from a scalar root, scaling by `seed`.
    pub fn backward(&mut self, root: Var, seed: f32) -> Result<()> {
        let value = &self.nodes[root.0].value;
        if !value.is_scalar() {
            return Err(Error::NonScalarRoot(value.shape().to_vec()));
        }
        self.backward_with_grad(root, vec![seed])
    }

    /// Backpropagates an explicit output gradient from any node.
    pub fn backward_with_grad(&mut self, root: Var, seed: Vec<f32>) -> Result<()> {
        let root_value = &self.nodes[root.0].value;
        if seed.len() != root_value.numel() {
            return Err(Error::invalid_shape(
                root_value.shape(),
                format!("seed gradient has {} elements", seed.len()),
            ));
        }
        let mut grads: Vec<Option<Vec<f32>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(seed);

        for index in (0..=root.0).rev() {
            let Some(grad) = grads[index].take() else {
                continue;
            };
            let node = &self.nodes[index];
            if !node.value.requires_grad() {
                continue;
            }
            match &node.op {
                None => {
                    self.nodes[index].value.accumulate_grad(&grad)?;
                }
                Some(op) => {
                    let inputs: Vec<&Tensor> =
                        node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                    let contributions = op.backward(&inputs, &node.value, &grad);
                    debug_assert_eq!(contributions.len(), node.inputs.len(), "{}", op.name());
                    for (input, contribution) in node.inputs.iter().zip(contributions) {
                        let Some(contribution) = contribution else {
                            continue;
                        };
                        if !self.nodes[input.0].value.requires_grad() {
                            continue;
                        }
                        match &mut grads[input.0] {
                            Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, c)| *a += c),
                            slot @ None => *slot = Some(contribution),
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
