//! Eager computation graph with reverse-mode differentiation.
//!
//! Values are computed as nodes are added; `backward` replays the tape in
//! reverse and accumulates vector-Jacobian products. Leaves registered with a
//! name (parameters, latent codes) can be differentiated against; anonymous
//! constants (targets, condition inputs) cannot.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{ops, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    Leaf,
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    ConvTranspose2d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    },
    Relu {
        input: NodeId,
    },
    Tanh {
        input: NodeId,
    },
    Reshape {
        input: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    L1Loss {
        a: NodeId,
        b: NodeId,
    },
    MeanScalars {
        parts: Vec<NodeId>,
    },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Gradient tensors keyed by parameter name, shape-matched to the parameters.
#[derive(Debug, Clone, Default)]
pub struct Gradients(BTreeMap<String, Tensor>);

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    named: BTreeMap<String, NodeId>,
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        id
    }

    /// Register a named differentiable leaf. Names must be unique per graph.
    pub fn leaf(&mut self, name: &str, value: Tensor) -> Result<NodeId> {
        if self.named.contains_key(name) {
            return Err(Error::DuplicateParameter(name.to_string()));
        }
        let id = self.push(Op::Leaf, value);
        self.named.insert(name.to_string(), id);
        Ok(id)
    }

    /// An anonymous leaf that gradients flow into but are never reported for.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.data()[0]
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let value = ops::dense(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(Op::Dense { input, weight, bias }, value))
    }

    pub fn conv_transpose2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let value = ops::conv_transpose2d(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            stride,
            padding,
        )?;
        Ok(self.push(
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            value,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let value = ops::relu(self.value(input));
        self.push(Op::Relu { input }, value)
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let value = ops::tanh(self.value(input));
        self.push(Op::Tanh { input }, value)
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(input).reshaped(shape)?;
        Ok(self.push(Op::Reshape { input }, value))
    }

    /// Concatenate 1-D tensors.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.shape().len() != 1 {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    expected: "1-D tensors".into(),
                    got: t.shape_str(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let value = Tensor::vector(&data);
        Ok(self.push(Op::Concat { parts: parts.to_vec() }, value))
    }

    pub fn l1_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = ops::l1_loss(self.value(a), self.value(b))?;
        Ok(self.push(Op::L1Loss { a, b }, Tensor::scalar(value)))
    }

    /// Mean of several scalar nodes.
    pub fn mean_scalars(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut acc = 0.0;
        for &p in parts {
            let t = self.value(p);
            if !t.is_scalar() {
                return Err(Error::NonScalarLoss(t.shape_str()));
            }
            acc += t.data()[0];
        }
        let value = Tensor::scalar(acc / parts.len() as f64);
        Ok(self.push(Op::MeanScalars { parts: parts.to_vec() }, value))
    }

    /// Reverse-mode gradients of the scalar `loss` node with respect to every
    /// named leaf in `wrt`. A leaf the loss does not depend on gets a zero
    /// gradient; a name never registered on this graph is an error.
    pub fn backward(&self, loss: NodeId, wrt: &[&str]) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.value(loss).shape_str()));
        }
        for &name in wrt {
            if !self.named.contains_key(name) {
                return Err(Error::UnknownParameter(name.to_string()));
            }
        }

        let mut adjoint: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adjoint[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let grad_out = match adjoint[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    adjoint[idx] = Some(grad_out);
                }
                Op::Dense { input, weight, bias } => {
                    let (d_in, d_w, d_b) = ops::dense_backward(
                        self.value(*input),
                        self.value(*weight),
                        &grad_out,
                    );
                    accumulate(&mut adjoint, *input, d_in);
                    accumulate(&mut adjoint, *weight, d_w);
                    accumulate(&mut adjoint, *bias, d_b);
                }
                Op::ConvTranspose2d {
                    input,
                    kernel,
                    bias,
                    stride,
                    padding,
                } => {
                    let (d_in, d_k, d_b) = ops::conv_transpose2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        &grad_out,
                        *stride,
                        *padding,
                    );
                    accumulate(&mut adjoint, *input, d_in);
                    accumulate(&mut adjoint, *kernel, d_k);
                    accumulate(&mut adjoint, *bias, d_b);
                }
                Op::Relu { input } => {
                    let d = ops::relu_backward(self.value(*input), &grad_out);
                    accumulate(&mut adjoint, *input, d);
                }
                Op::Tanh { input } => {
                    let d = ops::tanh_backward(&self.nodes[idx].value, &grad_out);
                    accumulate(&mut adjoint, *input, d);
                }
                Op::Reshape { input } => {
                    let d = grad_out.reshaped(self.value(*input).shape()).unwrap();
                    accumulate(&mut adjoint, *input, d);
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.value(p).numel();
                        let slice = Tensor::vector(&grad_out.data()[offset..offset + n]);
                        accumulate(&mut adjoint, p, slice);
                        offset += n;
                    }
                }
                Op::L1Loss { a, b } => {
                    let (d_a, d_b) =
                        ops::l1_loss_backward(self.value(*a), self.value(*b), grad_out.data()[0]);
                    accumulate(&mut adjoint, *a, d_a);
                    accumulate(&mut adjoint, *b, d_b);
                }
                Op::MeanScalars { parts } => {
                    let g = grad_out.data()[0] / parts.len() as f64;
                    for &p in parts {
                        accumulate(&mut adjoint, p, Tensor::scalar(g));
                    }
                }
            }
        }

        let mut grads = BTreeMap::new();
        for &name in wrt {
            let id = self.named[name];
            let g = match adjoint[id.0].take() {
                Some(g) => g,
                None => Tensor::zeros(self.value(id).shape()),
            };
            grads.insert(name.to_string(), g);
        }
        Ok(Gradients(grads))
    }
}

fn accumulate(adjoint: &mut [Option<Tensor>], id: NodeId, grad: Tensor) {
    match &mut adjoint[id.0] {
        Some(existing) => {
            for (e, g) in existing.data_mut().iter_mut().zip(grad.data()) {
                *e += g;
            }
        }
        slot => *slot = Some(grad),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_gradient_is_sign() {
        let mut g = Graph::new();
        let x = g.leaf("x", Tensor::vector(&[2.0])).unwrap();
        let zero = g.constant(Tensor::vector(&[0.0]));
        let loss = g.l1_loss(x, zero).unwrap();
        let grads = g.backward(loss, &["x"]).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[1.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf("x", Tensor::vector(&[2.0])).unwrap();
        g.leaf("unused", Tensor::vector(&[1.0, 2.0, 3.0])).unwrap();
        let zero = g.constant(Tensor::vector(&[0.0]));
        let loss = g.l1_loss(x, zero).unwrap();
        let grads = g.backward(loss, &["x", "unused"]).unwrap();
        assert_eq!(grads.get("unused").unwrap().data(), &[0.0, 0.0, 0.0]);
        assert_eq!(grads.get("unused").unwrap().shape(), &[3]);
    }

    #[test]
    fn unknown_parameter_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf("x", Tensor::vector(&[2.0])).unwrap();
        let zero = g.constant(Tensor::vector(&[0.0]));
        let loss = g.l1_loss(x, zero).unwrap();
        assert!(matches!(
            g.backward(loss, &["nope"]),
            Err(Error::UnknownParameter(_))
        ));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.leaf("x", Tensor::vector(&[1.0, 2.0])).unwrap();
        let y = g.relu(x);
        assert!(matches!(g.backward(y, &["x"]), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn gradient_accumulates_across_fanout() {
        // loss = mean(l1(x,0), l1(x,0)) -> d/dx = sign(x)/n, same as single use
        let mut g = Graph::new();
        let x = g.leaf("x", Tensor::vector(&[3.0, -2.0])).unwrap();
        let zero = g.constant(Tensor::vector(&[0.0, 0.0]));
        let l1 = g.l1_loss(x, zero).unwrap();
        let l2 = g.l1_loss(x, zero).unwrap();
        let loss = g.mean_scalars(&[l1, l2]).unwrap();
        let grads = g.backward(loss, &["x"]).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[0.5, -0.5]);
    }

    #[test]
    fn concat_splits_gradient() {
        let mut g = Graph::new();
        let a = g.leaf("a", Tensor::vector(&[1.0, 2.0])).unwrap();
        let b = g.leaf("b", Tensor::vector(&[5.0])).unwrap();
        let joined = g.concat(&[a, b]).unwrap();
        let target = g.constant(Tensor::vector(&[0.0, 0.0, 0.0]));
        let loss = g.l1_loss(joined, target).unwrap();
        let grads = g.backward(loss, &["a", "b"]).unwrap();
        assert_eq!(grads.get("a").unwrap().data(), &[1.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(grads.get("b").unwrap().data(), &[1.0 / 3.0]);
    }
}
