use std::collections::HashMap;
use std::fmt;

use super::{arith, nn, Segments, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Backward rule for primitives defined outside the tensor core.
///
/// `grad` is the upstream gradient of the output; the result holds one entry
/// per input, `None` meaning no contribution.
pub trait CustomBackward: Send {
    fn name(&self) -> &'static str;
    fn backward(&self, grad: &[f64], inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Vec<f64>>>;
}

pub(super) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRow(Var, Var),
    Matmul(Var, Var),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Sigmoid(Var),
    Swish(Var),
    Glu(Var),
    Softmax {
        x: Var,
        axis: usize,
    },
    LogSoftmax {
        x: Var,
        axis: usize,
    },
    LayerNorm(nn::NormSaved),
    BatchNorm(nn::NormSaved),
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    DepthwiseConv {
        x: Var,
        kernel: Var,
        dilation: usize,
        segments: Segments,
    },
    Mix {
        inputs: Vec<Var>,
        weights: Var,
    },
    Custom {
        inputs: Vec<Var>,
        rule: Box<dyn CustomBackward>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRow(..) => "add_row",
            Op::Matmul(..) => "matmul",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Swish(..) => "swish",
            Op::Glu(..) => "glu",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::LayerNorm(..) => "layer_norm",
            Op::BatchNorm(..) => "batch_norm",
            Op::Dropout { .. } => "dropout",
            Op::DepthwiseConv { .. } => "depthwise_conv1d",
            Op::Mix { .. } => "mix",
            Op::Custom { rule, .. } => rule.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::Matmul(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Swish(x)
            | Op::Glu(x)
            | Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::Dropout { x, .. } => vec![*x],
            Op::LayerNorm(s) | Op::BatchNorm(s) => vec![s.x, s.gain, s.bias],
            Op::DepthwiseConv { x, kernel, .. } => vec![*x, *kernel],
            Op::Mix { inputs, weights } => {
                let mut v = inputs.clone();
                v.push(*weights);
                v
            }
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of primitive applications.
///
/// Nodes are stored in creation order, which is a topological order: every
/// op's inputs exist before it does.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Records an input that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Name of the primitive that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn inputs(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }

    /// Every recorded node, in recording order.
    pub fn vars(&self) -> impl Iterator<Item = Var> {
        (0..self.nodes.len()).map(Var)
    }

    pub(super) fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_raw(value, op, requires_grad)
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a primitive whose backward rule lives outside this module.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, rule: Box<dyn CustomBackward>) -> Var {
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                rule,
            },
        )
    }

    /// Runs reverse-mode differentiation from the scalar `loss`, consuming
    /// the tape. Gradients are returned for every differentiable leaf that
    /// the loss depends on.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        let mut out = HashMap::new();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let mut acc = Accumulator {
                nodes: &self.nodes,
                grads: &mut grads,
            };
            match &node.op {
                Op::Leaf => {
                    let t = Tensor {
                        shape: node.value.shape.clone(),
                        data: g,
                    };
                    out.insert(idx, t);
                }
                Op::Add(a, b) => {
                    acc.add(*a, &g);
                    acc.add(*b, &g);
                }
                Op::Sub(a, b) => {
                    acc.add(*a, &g);
                    acc.with(*b, |d| d.iter_mut().zip(&g).for_each(|(d, g)| *d -= g));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    acc.with(*a, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * vb[i];
                        }
                    });
                    acc.with(*b, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * va[i];
                        }
                    });
                }
                Op::Scale(x, c) => {
                    acc.with(*x, |d| d.iter_mut().zip(&g).for_each(|(d, g)| *d += c * g))
                }
                Op::AddRow(a, b) => {
                    acc.add(*a, &g);
                    let n = self.value(*b).len();
                    acc.with(*b, |d| {
                        for row in g.chunks(n) {
                            d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                        }
                    });
                }
                Op::Matmul(a, b) => arith::matmul_backward(&mut acc, *a, *b, &g),
                Op::Sum(x) => acc.with(*x, |d| d.iter_mut().for_each(|d| *d += g[0])),
                Op::Mean(x) => {
                    let n = self.value(*x).len() as f64;
                    acc.with(*x, |d| d.iter_mut().for_each(|d| *d += g[0] / n))
                }
                Op::Relu(x) => {
                    let v = self.value(*x).data();
                    acc.with(*x, |d| {
                        for i in 0..d.len() {
                            if v[i] > 0.0 {
                                d[i] += g[i];
                            }
                        }
                    })
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    acc.with(*x, |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * y[i] * (1.0 - y[i]);
                        }
                    })
                }
                Op::Swish(x) => {
                    let v = self.value(*x).data();
                    acc.with(*x, |d| {
                        for i in 0..d.len() {
                            let s = nn::sigmoid(v[i]);
                            d[i] += g[i] * (s + v[i] * s * (1.0 - s));
                        }
                    })
                }
                Op::Glu(x) => nn::glu_backward(&mut acc, *x, &g),
                Op::Softmax { x, axis } => {
                    nn::softmax_backward(&mut acc, *x, &node.value, *axis, &g)
                }
                Op::LogSoftmax { x, axis } => {
                    nn::log_softmax_backward(&mut acc, *x, &node.value, *axis, &g)
                }
                Op::LayerNorm(s) => nn::layer_norm_backward(&mut acc, s, &g),
                Op::BatchNorm(s) => nn::batch_norm_backward(&mut acc, s, &g),
                Op::Dropout { x, mask } => acc.with(*x, |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * mask[i];
                    }
                }),
                Op::DepthwiseConv {
                    x,
                    kernel,
                    dilation,
                    segments,
                } => nn::depthwise_backward(&mut acc, *x, *kernel, *dilation, segments, &g),
                Op::Mix { inputs, weights } => {
                    let w = self.value(*weights).data().to_vec();
                    let mut dw = vec![0.0; inputs.len()];
                    for (k, &inp) in inputs.iter().enumerate() {
                        dw[k] = arith::dot(self.value(inp).data(), &g);
                        acc.with(inp, |d| {
                            d.iter_mut().zip(&g).for_each(|(d, g)| *d += w[k] * g)
                        });
                    }
                    acc.add(*weights, &dw);
                }
                Op::Custom { inputs, rule } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                    let contributions = rule.backward(&g, &values, &node.value);
                    for (inp, contrib) in inputs.iter().zip(contributions) {
                        if let Some(c) = contrib {
                            acc.add(*inp, &c);
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Sums gradient contributions into per-node buffers, skipping inputs that
/// do not require a gradient.
pub(super) struct Accumulator<'a> {
    nodes: &'a [Node],
    grads: &'a mut Vec<Option<Vec<f64>>>,
}

impl Accumulator<'_> {
    pub(super) fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub(super) fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let n = self.nodes[v.0].value.len();
        let slot = self.grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    pub(super) fn add(&mut self, v: Var, g: &[f64]) {
        self.with(v, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
    }
}

/// Gradients of a scalar loss with respect to differentiable leaves.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v.0)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.remove(&v.0)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
