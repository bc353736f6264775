//! Tape-based computation graph.
//!
//! Every forward op appends a node to the tape, so node order is already a
//! topological order. `backward` walks the tape once in reverse, visiting each
//! node exactly once, and sums contributions for nodes used more than once.

use crate::element::Element;
use crate::error::{AutodiffError, Result};
use crate::ops::{activation, basic, conv, norm};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`] tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// Forward-pass mode. Train mode carries the key for counter-based dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64, step: u64 },
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d(Box<conv::Conv1dSaved<T>>),
    Conv2d(Box<conv::Conv2dSaved<T>>),
    BatchNorm(Box<norm::BatchNormSaved<T>>),
    Elu {
        x: Var,
        alpha: T,
    },
    Gelu(Var),
    Relu(Var),
    Dropout {
        x: Var,
        mask: Vec<T>,
    },
    AvgPool2d {
        x: Var,
        kh: usize,
        kw: usize,
    },
    MeanLast(Var),
    LogSoftmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<T>,
    },
    L2Normalize {
        x: Var,
        norms: Vec<f64>,
    },
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    pub grad: Option<Vec<T>>,
    pub param: Option<ParamId>,
}

pub struct Graph<T: Element> {
    pub(crate) nodes: Vec<Node<T>>,
    mode: Mode,
}

pub(crate) type GradSlots<T> = [Option<Vec<T>>];

/// Mutable gradient buffer for `v`, or `None` when `v` does not need one.
pub(crate) fn slot<'a, T: Element>(
    grads: &'a mut GradSlots<T>,
    nodes: &[Node<T>],
    v: Var,
) -> Option<&'a mut [T]> {
    let node = &nodes[v.0];
    if !node.requires_grad {
        return None;
    }
    let n = node.value.numel();
    Some(
        grads[v.0]
            .get_or_insert_with(|| vec![T::zero(); n])
            .as_mut_slice(),
    )
}

impl<T: Element> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Graph {
            nodes: Vec::new(),
            mode,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy a stored parameter onto the tape. Trainable entries become
    /// gradient-tracking leaves.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let e = store.entry(id);
        self.nodes.push(Node {
            value: e.value.clone(),
            op: Op::Leaf,
            requires_grad: e.trainable,
            grad: None,
            param: Some(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf after one or more `backward` calls.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Reverse-mode sweep from a scalar `loss`. Leaf gradients accumulate
    /// across calls until taken.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    None => node.grad = Some(g),
                }
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut GradSlots<T>) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::Add(a, b) => {
                basic::add_into(grads, nodes, *a, g, T::one());
                basic::add_into(grads, nodes, *b, g, T::one());
            }
            Op::Sub(a, b) => {
                basic::add_into(grads, nodes, *a, g, T::one());
                basic::add_into(grads, nodes, *b, g, -T::one());
            }
            Op::Mul(a, b) => basic::mul_backward(grads, nodes, *a, *b, g),
            Op::Scale(a, c) => basic::add_into(grads, nodes, *a, g, *c),
            Op::AddScalar(a) => basic::add_into(grads, nodes, *a, g, T::one()),
            Op::Sum(a) => basic::broadcast_scalar_into(grads, nodes, *a, g[0]),
            Op::Mean(a) => {
                let n = T::of(nodes[a.0].value.numel() as f64);
                basic::broadcast_scalar_into(grads, nodes, *a, g[0] / n)
            }
            Op::MatMul(a, b) => basic::matmul_backward(grads, nodes, *a, *b, g),
            Op::Transpose(a) => basic::transpose_backward(grads, nodes, *a, g),
            Op::Reshape(a) => basic::add_into(grads, nodes, *a, g, T::one()),
            Op::Linear { x, w, b } => basic::linear_backward(grads, nodes, *x, *w, *b, g),
            Op::Conv1d(s) => conv::conv1d_backward(s, grads, nodes, g),
            Op::Conv2d(s) => conv::conv2d_backward(s, grads, nodes, g),
            Op::BatchNorm(s) => norm::batch_norm_backward(s, grads, nodes, g),
            Op::Elu { x, alpha } => activation::elu_backward(grads, nodes, *x, *alpha, out, g),
            Op::Gelu(x) => activation::gelu_backward(grads, nodes, *x, g),
            Op::Relu(x) => activation::relu_backward(grads, nodes, *x, g),
            Op::Dropout { x, mask } => activation::dropout_backward(grads, nodes, *x, mask, g),
            Op::AvgPool2d { x, kh, kw } => {
                basic::avg_pool2d_backward(grads, nodes, *x, *kh, *kw, g)
            }
            Op::MeanLast(x) => basic::mean_last_backward(grads, nodes, *x, g),
            Op::LogSoftmax(x) => basic::log_softmax_backward(grads, nodes, *x, out, g),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => basic::cross_entropy_backward(grads, nodes, *logits, targets, probs, g[0]),
            Op::L2Normalize { x, norms } => {
                basic::l2_normalize_backward(grads, nodes, *x, out, norms, g)
            }
        }
    }

    /// Move accumulated leaf gradients into the parameter store (summing when
    /// a parameter entered the tape more than once).
    pub fn accumulate_param_grads(&mut self, store: &mut ParamStore<T>) {
        for node in &mut self.nodes {
            if let (Some(id), Some(g)) = (node.param, node.grad.take()) {
                let e = store.entry_mut(id);
                e.grad.iter_mut().zip(&g).for_each(|(a, b)| *a += *b);
            }
        }
    }
}
