//! Minimal reverse-mode automatic differentiation over flat f64 buffers.
//!
//! A [`Tape`] owns every tensor created during a unit of work. Tensors are
//! addressed by [`TensorId`]; node index order is topological order, so the
//! backward pass is a single reverse sweep. Two gradient sinks exist:
//! [`Tape::backward`] accumulates into each node's own `grad` buffer (the
//! training path), while [`Tape::backward_scratch`] returns an isolated
//! [`GradMap`] and leaves the tape untouched (the attention-target path).
//!
//! Everything is double precision and sequential: identical inputs produce
//! bit-identical values and gradients across runs.

use crate::error::{Error, Result};

mod ops;

/// Row-major tensor shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, "x")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(dims: [usize; N]) -> Self {
        Shape(dims.to_vec())
    }
}

impl From<Vec<usize>> for Shape {
    fn from(dims: Vec<usize>) -> Self {
        Shape(dims)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct TensorId(pub(crate) usize);

/// How a node was produced; inputs always precede the node on the tape.
#[derive(Clone, Debug)]
pub(crate) enum OpKind {
    Leaf,
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    Relu(TensorId),
    MatVec {
        weights: TensorId,
        vector: TensorId,
    },
    Conv2d {
        input: TensorId,
        kernels: TensorId,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool(TensorId),
    SoftmaxTau {
        input: TensorId,
        tau: f64,
    },
    KlDiv {
        p: TensorId,
        q: TensorId,
    },
    ChannelMax(TensorId),
    Sum(TensorId),
    Index {
        input: TensorId,
        index: usize,
    },
    Concat(Vec<TensorId>),
    Reshape(TensorId),
    Transpose2d(TensorId),
    ChannelSlice {
        input: TensorId,
        channel: usize,
    },
    CrossEntropy {
        logits: TensorId,
        label: usize,
    },
    AttentivePool {
        map: TensorId,
        features: TensorId,
    },
}

pub(crate) struct Node {
    values: Vec<f64>,
    shape: Shape,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
    op: OpKind,
}

/// Gradients from an isolated backward pass, indexed by [`TensorId`].
pub struct GradMap {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradMap {
    /// Gradient of the loss w.r.t. the given node, if any flowed to it.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }
}

/// Recording arena for one unit of differentiable work.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that participates in backward (a trainable parameter).
    pub fn param(&mut self, values: Vec<f64>, shape: impl Into<Shape>) -> Result<TensorId> {
        self.leaf(values, shape.into(), true)
    }

    /// Leaf excluded from backward (inputs, detached targets).
    pub fn constant(&mut self, values: Vec<f64>, shape: impl Into<Shape>) -> Result<TensorId> {
        self.leaf(values, shape.into(), false)
    }

    pub fn scalar_constant(&mut self, value: f64) -> Result<TensorId> {
        self.constant(vec![value], [1])
    }

    fn leaf(&mut self, values: Vec<f64>, shape: Shape, requires_grad: bool) -> Result<TensorId> {
        if shape.numel() != values.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {shape} implies {} values, got {}", shape.numel(), values.len()),
            ));
        }
        ensure_finite("leaf", &values, None)?;
        Ok(self.push(values, shape, OpKind::Leaf, requires_grad))
    }

    fn push(&mut self, values: Vec<f64>, shape: Shape, op: OpKind, requires_grad: bool) -> TensorId {
        debug_assert_eq!(values.len(), shape.numel());
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            values,
            shape,
            requires_grad,
            grad: None,
            op,
        });
        id
    }

    pub fn values(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &Shape {
        &self.nodes[id.0].shape
    }

    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn is_leaf(&self, id: TensorId) -> bool {
        matches!(self.nodes[id.0].op, OpKind::Leaf)
    }

    /// A tensor is detached when it has no tape linkage at all: a leaf that
    /// backward will never reach or propagate through.
    pub fn is_detached(&self, id: TensorId) -> bool {
        self.is_leaf(id) && !self.requires_grad(id)
    }

    /// Accumulated gradient from [`Tape::backward`], if any flowed to `id`.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Copy of the values as a fresh constant leaf: no tape linkage, no
    /// gradient flow, unaffected by anything that later happens upstream.
    pub fn detach(&mut self, id: TensorId) -> TensorId {
        let values = self.nodes[id.0].values.clone();
        let shape = self.nodes[id.0].shape.clone();
        self.push(values, shape, OpKind::Leaf, false)
    }

    /// Reverse sweep from a scalar loss, accumulating into each
    /// `requires_grad` node's own grad buffer.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let flowed = self.propagate(loss)?;
        for (node, g) in self.nodes.iter_mut().zip(flowed) {
            if !node.requires_grad {
                continue;
            }
            if let Some(g) = g {
                match &mut node.grad {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => node.grad = Some(g),
                }
            }
        }
        Ok(())
    }

    /// Reverse sweep into an isolated buffer. The tape itself is not touched:
    /// node grads, values, and structure all stay as they were, so a target
    /// computation can never leak into the training gradients.
    pub fn backward_scratch(&self, loss: TensorId) -> Result<GradMap> {
        Ok(GradMap {
            grads: self.propagate(loss)?,
        })
    }

    fn propagate(&self, loss: TensorId) -> Result<Vec<Option<Vec<f64>>>> {
        let loss_node = &self.nodes[loss.0];
        if !loss_node.shape.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {}",
                loss_node.shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let (earlier, rest) = grads.split_at_mut(id);
            let Some(upstream) = rest[0].as_deref() else {
                continue;
            };
            self.backward_op(id, upstream, earlier);
        }
        Ok(grads)
    }
}

/// Zero-initialize the slot on first touch, then let the rule accumulate.
fn accumulate(slot: &mut Option<Vec<f64>>, len: usize, rule: impl FnOnce(&mut [f64])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    debug_assert_eq!(buf.len(), len);
    rule(buf);
}

fn ensure_finite(op: &'static str, values: &[f64], context: Option<&str>) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            op,
            context: context.map(str::to_owned),
        })
    }
}
