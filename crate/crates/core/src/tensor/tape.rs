//! Wengert tape: primitives are recorded in application order, then a
//! single reverse sweep distributes gradients via the chain rule.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};

use super::{grad, ops, Element, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape. Only valid for the tape that
/// produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    pub(crate) tape: u64,
    pub(crate) index: u32,
}

/// Identifier plus attributes of a differentiable primitive.
#[derive(Clone, Debug, PartialEq)]
pub enum PrimOp {
    Leaf,
    Add,
    Sub,
    Mul,
    AddScalar(f64),
    MulScalar(f64),
    /// `(m, k) @ (k, n)`.
    MatMul,
    /// `(n, m, k) @ (n, k, p)` batched over the leading axis.
    BatchMatMul,
    /// `x: (B, Cin, T)`, `w: (Cout, Cin, k)`, zero "same" padding, stride 1.
    Conv1d { kernel: usize },
    /// `x: (B, C, T)`, `w: (C, k)`, one filter per channel.
    DepthwiseConv1d { kernel: usize },
    Sigmoid,
    Tanh,
    Gelu,
    Softmax { axis: usize },
    /// Normalizes over the channel axis of a `(B, C, T)` tensor at each
    /// `(b, t)`, without affine.
    LayerNormChannels { eps: f64 },
    /// Mean over one axis, keeping it with size 1.
    MeanAxis { axis: usize },
    /// Moving average over the last axis, zero "same" padding, divisor `kernel`.
    AvgPool1d { kernel: usize },
    Concat { axis: usize },
    Slice { axis: usize, start: usize, len: usize },
    BroadcastTo { shape: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Permute { axes: Vec<usize> },
    SumAll,
    MeanAll,
    /// GRU over a full sequence. Inputs: per-step gate pre-activations
    /// from the input path `(B, 3C, T)` (update/reset/candidate chunks
    /// along the channel axis) and the recurrent weight `(C, 3C)`.
    /// Output: hidden states `(B, C, T)`, `h_0 = 0`.
    GruSeq,
}

impl PrimOp {
    pub fn name(&self) -> &'static str {
        match self {
            PrimOp::Leaf => "leaf",
            PrimOp::Add => "add",
            PrimOp::Sub => "sub",
            PrimOp::Mul => "mul",
            PrimOp::AddScalar(_) => "add_scalar",
            PrimOp::MulScalar(_) => "mul_scalar",
            PrimOp::MatMul => "matmul",
            PrimOp::BatchMatMul => "batch_matmul",
            PrimOp::Conv1d { .. } => "conv1d",
            PrimOp::DepthwiseConv1d { .. } => "depthwise_conv1d",
            PrimOp::Sigmoid => "sigmoid",
            PrimOp::Tanh => "tanh",
            PrimOp::Gelu => "gelu",
            PrimOp::Softmax { .. } => "softmax",
            PrimOp::LayerNormChannels { .. } => "layer_norm",
            PrimOp::MeanAxis { .. } => "mean_axis",
            PrimOp::AvgPool1d { .. } => "avg_pool1d",
            PrimOp::Concat { .. } => "concat",
            PrimOp::Slice { .. } => "slice",
            PrimOp::BroadcastTo { .. } => "broadcast_to",
            PrimOp::Reshape { .. } => "reshape",
            PrimOp::Permute { .. } => "permute",
            PrimOp::SumAll => "sum_all",
            PrimOp::MeanAll => "mean_all",
            PrimOp::GruSeq => "gru_seq",
        }
    }
}

pub(crate) struct Node<E> {
    pub op: PrimOp,
    pub inputs: Vec<u32>,
    pub value: Tensor<E>,
    /// Op-specific buffers kept for the backward rule.
    pub saved: Vec<Arc<Vec<E>>>,
    pub needs_grad: bool,
    pub requires_grad: bool,
    pub grad: Option<Vec<E>>,
}

/// Records one forward pass. Belongs to exactly one thread.
pub struct Tape<E> {
    id: u64,
    nodes: Vec<Node<E>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input value. Gradients are accumulated for it only
    /// when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<E>, requires_grad: bool) -> Var {
        self.push(Node {
            op: PrimOp::Leaf,
            inputs: vec![],
            value,
            saved: vec![],
            needs_grad: requires_grad,
            requires_grad,
            grad: None,
        })
    }

    /// Applies a primitive, recording it for the backward pass when any
    /// input participates in gradients.
    pub fn apply(&mut self, op: PrimOp, inputs: &[Var]) -> Result<Var> {
        let mut idx = Vec::with_capacity(inputs.len());
        let mut needs_grad = false;
        for v in inputs {
            if v.tape != self.id || v.index as usize >= self.nodes.len() {
                return Err(Error::Config(format!(
                    "{}: input var was not produced by this tape",
                    op.name()
                )));
            }
            needs_grad |= self.nodes[v.index as usize].needs_grad;
            idx.push(v.index);
        }
        let in_vals: Vec<&Tensor<E>> = idx.iter().map(|&i| &self.nodes[i as usize].value).collect();
        let ops::Computed { value, saved } = ops::forward(&op, &in_vals, needs_grad)?;
        value.validate_finite(op.name())?;
        Ok(self.push(Node {
            op,
            inputs: idx,
            value,
            saved,
            needs_grad,
            requires_grad: false,
            grad: None,
        }))
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        assert_eq!(v.tape, self.id, "var from another tape");
        &self.nodes[v.index as usize].value
    }

    /// Gradient of the last `backward` root with respect to `v`, if one
    /// was accumulated.
    pub fn grad(&self, v: Var) -> Option<Tensor<E>> {
        assert_eq!(v.tape, self.id, "var from another tape");
        let node = &self.nodes[v.index as usize];
        node.grad
            .as_ref()
            .map(|g| Tensor::from_arc(node.value.shape().to_vec(), Arc::new(g.clone())))
    }

    /// Reverse sweep from a scalar root: every leaf with `requires_grad`
    /// ends up holding dRoot/dLeaf. Fan-out accumulates additively.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        self.backward_seeded(root, None)
    }

    /// Like [`Tape::backward`] but with an explicit seed gradient of the
    /// root's shape (required when the root is not a scalar).
    pub fn backward_seeded(&mut self, root: Var, seed: Option<&Tensor<E>>) -> Result<()> {
        if root.tape != self.id || root.index as usize >= self.nodes.len() {
            return Err(Error::Config(
                "backward: root was not produced by this tape".into(),
            ));
        }
        let root_idx = root.index as usize;
        let root_numel = self.nodes[root_idx].value.numel();
        let seed_vec = match seed {
            Some(s) => {
                if s.shape() != self.nodes[root_idx].value.shape() {
                    return Err(Error::Shape(format!(
                        "backward: seed shape {:?} != root shape {:?}",
                        s.shape(),
                        self.nodes[root_idx].value.shape()
                    )));
                }
                s.data().to_vec()
            }
            None => {
                if root_numel != 1 {
                    return Err(Error::Shape(format!(
                        "backward: root has {root_numel} elements; scalar required without a seed"
                    )));
                }
                vec![E::one()]
            }
        };
        if !self.nodes[root_idx].needs_grad {
            return Ok(());
        }
        self.nodes[root_idx].grad = Some(seed_vec);

        for i in (0..=root_idx).rev() {
            if self.nodes[i].grad.is_none() || matches!(self.nodes[i].op, PrimOp::Leaf) {
                continue;
            }
            let grad_out = self.nodes[i].grad.take().expect("checked above");
            let node = &self.nodes[i];
            let input_vals: Vec<&Tensor<E>> = node
                .inputs
                .iter()
                .map(|&j| &self.nodes[j as usize].value)
                .collect();
            let input_needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&j| self.nodes[j as usize].needs_grad)
                .collect();
            let contributions = grad::backward(
                &node.op,
                &input_vals,
                &node.value,
                &node.saved,
                &grad_out,
                &input_needs,
            )?;
            debug_assert_eq!(contributions.len(), node.inputs.len());
            let input_indices = node.inputs.clone();
            for (slot, contribution) in input_indices.iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                let target = &mut self.nodes[*slot as usize];
                match &mut target.grad {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(c) {
                            *a += v;
                        }
                    }
                    None => target.grad = Some(c),
                }
            }
        }
        // Intermediate grads were dropped as they were consumed; leaves
        // that never required gradients should not report one.
        for node in &mut self.nodes {
            if !node.requires_grad && matches!(node.op, PrimOp::Leaf) {
                node.grad = None;
            }
        }
        Ok(())
    }

    fn push(&mut self, node: Node<E>) -> Var {
        let index = u32::try_from(self.nodes.len()).expect("tape too long");
        self.nodes.push(node);
        Var {
            tape: self.id,
            index,
        }
    }

    // Convenience wrappers. Shape checks live in the forward kernels.

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimOp::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimOp::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimOp::Mul, &[a, b])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(PrimOp::AddScalar(c), &[a])
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(PrimOp::MulScalar(c), &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimOp::MatMul, &[a, b])
    }

    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(PrimOp::BatchMatMul, &[a, b])
    }

    pub fn conv1d(&mut self, x: Var, w: Var, kernel: usize) -> Result<Var> {
        self.apply(PrimOp::Conv1d { kernel }, &[x, w])
    }

    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, kernel: usize) -> Result<Var> {
        self.apply(PrimOp::DepthwiseConv1d { kernel }, &[x, w])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimOp::Sigmoid, &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimOp::Tanh, &[x])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimOp::Gelu, &[x])
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(PrimOp::Softmax { axis }, &[x])
    }

    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.apply(PrimOp::LayerNormChannels { eps }, &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.apply(PrimOp::MeanAxis { axis }, &[x])
    }

    pub fn avg_pool1d(&mut self, x: Var, kernel: usize) -> Result<Var> {
        self.apply(PrimOp::AvgPool1d { kernel }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        self.apply(PrimOp::Concat { axis }, parts)
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.apply(PrimOp::Slice { axis, start, len }, &[x])
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(
            PrimOp::BroadcastTo {
                shape: shape.to_vec(),
            },
            &[x],
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.apply(
            PrimOp::Reshape {
                shape: shape.to_vec(),
            },
            &[x],
        )
    }

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        self.apply(
            PrimOp::Permute {
                axes: axes.to_vec(),
            },
            &[x],
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimOp::SumAll, &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.apply(PrimOp::MeanAll, &[x])
    }

    pub fn gru_seq(&mut self, gates: Var, u: Var) -> Result<Var> {
        self.apply(PrimOp::GruSeq, &[gates, u])
    }
}
