use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{ConvSpec, LayerNormSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv(ConvSpec),
    Norm(LayerNormSpec),
}

/// A named learnable layer. Convolutions own `<name>.weight` and
/// `<name>.bias`; norms own `<name>.gamma` and `<name>.beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerDecl {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerDecl {
    pub fn conv(name: impl Into<String>, spec: ConvSpec) -> Self {
        LayerDecl { name: name.into(), kind: LayerKind::Conv(spec) }
    }

    pub fn norm(name: impl Into<String>, channels: usize) -> Self {
        LayerDecl { name: name.into(), kind: LayerKind::Norm(LayerNormSpec::new(channels)) }
    }

    pub fn num_params(&self) -> usize {
        match &self.kind {
            LayerKind::Conv(spec) => spec.num_params(),
            LayerKind::Norm(spec) => spec.num_params(),
        }
    }
}

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Initializes every layer: conv weights from `U(-b, b)` with
    /// `b = sqrt(1 / fan_in)`, zero biases, unit gamma and zero beta.
    pub fn init(layers: &[LayerDecl], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for layer in layers {
            match &layer.kind {
                LayerKind::Conv(spec) => {
                    let bound = (1.0 / spec.fan_in() as f64).sqrt() as f32;
                    let weight = Tensor::from_fn(spec.weight_shape(), |_| {
                        rng.random_range(-bound..=bound)
                    });
                    store.insert(format!("{}.weight", layer.name), weight);
                    if spec.has_bias {
                        store.insert(format!("{}.bias", layer.name), Tensor::zeros([spec.out_channels]));
                    }
                }
                LayerKind::Norm(spec) => {
                    if spec.affine {
                        store.insert(format!("{}.gamma", layer.name), Tensor::ones([spec.channels]));
                        store.insert(format!("{}.beta", layer.name), Tensor::zeros([spec.channels]));
                    }
                }
            }
        }
        store
    }

    /// Inserts or replaces a tensor, keeping first-insertion order.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = tensor,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(tensor);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        match self.index.get(name) {
            Some(&i) => Ok(&mut self.tensors[i]),
            None => Err(Error::UnknownParam(name.to_string())),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Registers every parameter as a graph leaf.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> BoundParams<'_> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.param(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        BoundParams { vars, index: &self.index }
    }

    /// Adds the gradients accumulated in `graph` into each parameter.
    pub fn accumulate_grads(&mut self, graph: &Graph, bound: &[Var]) -> Result<()> {
        for (tensor, &var) in self.tensors.iter_mut().zip(bound) {
            if let Some(g) = graph.grad(var) {
                tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}

/// Parameters registered in one graph, addressable by name.
pub struct BoundParams<'a> {
    vars: Vec<Var>,
    index: &'a HashMap<String, usize>,
}

impl BoundParams<'_> {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.index
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Routes `name` to a different graph variable, e.g. to probe gradients
    /// with respect to a single parameter.
    pub fn replace(&mut self, name: &str, var: Var) -> Result<()> {
        let i = *self.index.get(name).ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        self.vars[i] = var;
        Ok(())
    }
}
