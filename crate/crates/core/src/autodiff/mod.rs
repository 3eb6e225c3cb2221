//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value,
//! its parents and a backward rule. Parents always precede children, so
//! the node list is already in topological order and [`Graph::backward`]
//! simply walks it in reverse. Accumulation order is fixed, so repeated
//! runs are bitwise reproducible.
//!
//! Shape mismatches inside an operation are programming errors and panic;
//! numerical failures during the backward pass are reported as errors.

mod conv;
mod fused;
mod gradcheck;
mod ops;

use std::fmt;

use crate::error::{Error, Result};

pub use fused::{attention_maps, AttentionMaps, AttentionMix, SpectralLossConsts};
pub use gradcheck::{grad_check, grad_check_scaled, relative_error, GradCheckReport};

/// Dense row-major tensor value.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.data.len() <= 16 {
            write!(f, "Tensor{:?}{:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?}[{} values]", self.shape, self.data.len())
        }
    }
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "tensor of shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    /// Like [`Tensor::new`] but panics on a length mismatch.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        Self::new(shape, data).expect("tensor shape/data mismatch")
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor with {} values", self.data.len());
        self.data[0]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len(), "reshape changes element count");
        self.shape = shape.to_vec();
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of an operation.
pub(crate) trait Backward {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, given the upstream gradient.
    /// Entries whose `needs` flag is false may be returned as `None`.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor, needs: &[bool]) -> Vec<Option<Tensor>>;
}

struct Node {
    value: Tensor,
    parents: Vec<Var>,
    rule: Option<Box<dyn Backward>>,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// A forward pass recorded for differentiation.
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

    /// A constant input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A trainable leaf whose gradient is populated by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), rule: None, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, parents: &[Var], rule: impl Backward + 'static) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        let rule: Option<Box<dyn Backward>> = if requires_grad { Some(Box::new(rule)) } else { None };
        self.nodes.push(Node { value, parents: parents.to_vec(), rule, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] loss with respect to a
    /// trainable leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.nodes[v.0].grad.take()
    }

    /// Populates gradients on every trainable ancestor of `loss`.
    /// Intermediate gradients are released as soon as they are consumed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = &self.nodes[loss.0].value;
        if lv.numel() != 1 {
            return Err(Error::InvalidArgument(format!("backward needs a scalar loss, got shape {:?}", lv.shape)));
        }
        if !lv.data[0].is_finite() {
            return Err(Error::NonFinite(format!("loss value {}", lv.data[0])));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::full(&self.nodes[loss.0].value.shape.clone(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(rule) = node.rule.as_ref() else { continue };
            let Some(grad) = node.grad.as_ref() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|p| self.nodes[p.0].requires_grad).collect();
            let inputs: Vec<&Tensor> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
            let grads = rule.backward(&inputs, &node.value, grad, &needs);
            let name = rule.name();
            let parents = node.parents.clone();
            debug_assert_eq!(grads.len(), parents.len(), "{name}: wrong number of input gradients");
            for (p, g) in parents.into_iter().zip(grads) {
                let Some(g) = g else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                if !g.is_finite() {
                    return Err(Error::NanGradient { node: idx, op: name });
                }
                assert_eq!(g.shape, self.nodes[p.0].value.shape, "{name}: gradient shape mismatch");
                match self.nodes[p.0].grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => self.nodes[p.0].grad = Some(g),
                }
            }
            // keep gradients on leaves only
            self.nodes[idx].grad = None;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
