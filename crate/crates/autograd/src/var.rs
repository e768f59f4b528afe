//! Graph nodes and reverse-mode differentiation.
//!
//! Every backward rule is written in terms of [`Var`] operations, so the
//! gradients returned by [`grad`] are themselves graph nodes and can be
//! differentiated again. That is what makes input-gradient penalties
//! trainable with respect to network parameters.

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use crate::tensor::{ConvGeom, Tensor};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    AddScalar,
    MatMul,
    Transpose,
    Reshape,
    SumAxes(Vec<bool>),
    BroadcastAxes(Vec<bool>),
    Narrow { axis: usize, start: usize },
    Embed { axis: usize, start: usize },
    Concat { axis: usize },
    Conv2d(ConvGeom),
    ConvInputGrad(ConvGeom),
    ConvWeightGrad(ConvGeom),
    PadReplicate(usize),
    PadReplicateAdjoint(usize),
    UpsampleNearest(usize),
    SumPool(usize),
    /// Multiplication by a fixed slope mask; covers ReLU, leaky ReLU and abs.
    MaskMul(Rc<Tensor>),
    Tanh,
    Sigmoid,
    Sqrt,
    /// `1/x`, defined as 0 at exactly 0.
    SafeRecip,
}

struct Node {
    id: u64,
    value: Tensor,
    requires_grad: bool,
    op: Op,
    parents: Vec<Var>,
}

/// A tensor value recorded in the computation graph.
#[derive(Clone)]
pub struct Var(Rc<Node>);

impl std::fmt::Debug for Var {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Var {
    /// A leaf that gradients can be taken with respect to.
    pub fn param(value: Tensor) -> Var {
        Var::leaf(value, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(value: Tensor) -> Var {
        Var::leaf(value, false)
    }

    fn leaf(value: Tensor, requires_grad: bool) -> Var {
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            op: Op::Leaf,
            parents: Vec::new(),
        }))
    }

    fn from_op(value: Tensor, op: Op, parents: Vec<Var>) -> Var {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        Var(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad,
            op,
            // Constant subgraphs never need their history.
            parents: if requires_grad { parents } else { Vec::new() },
        }))
    }

    pub fn value(&self) -> &Tensor {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var {
        Var::constant(self.0.value.clone())
    }

    pub fn add(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a + b),
            Op::Add,
            vec![self.clone(), other.clone()],
        )
    }

    pub fn sub(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a - b),
            Op::Sub,
            vec![self.clone(), other.clone()],
        )
    }

    pub fn mul(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().zip_map(other.value(), |a, b| a * b),
            Op::Mul,
            vec![self.clone(), other.clone()],
        )
    }

    pub fn neg(&self) -> Var {
        Var::from_op(self.value().map(|v| -v), Op::Neg, vec![self.clone()])
    }

    pub fn scale(&self, c: f64) -> Var {
        Var::from_op(self.value().map(|v| v * c), Op::Scale(c), vec![self.clone()])
    }

    pub fn add_scalar(&self, c: f64) -> Var {
        Var::from_op(self.value().map(|v| v + c), Op::AddScalar, vec![self.clone()])
    }

    pub fn square(&self) -> Var {
        self.mul(self)
    }

    pub fn matmul(&self, other: &Var) -> Var {
        Var::from_op(
            self.value().matmul(other.value()),
            Op::MatMul,
            vec![self.clone(), other.clone()],
        )
    }

    pub fn transpose(&self) -> Var {
        Var::from_op(self.value().transpose2(), Op::Transpose, vec![self.clone()])
    }

    pub fn reshape(&self, shape: &[usize]) -> Var {
        Var::from_op(self.value().reshape(shape), Op::Reshape, vec![self.clone()])
    }

    /// Sum over axes whose `keep` flag is false.
    pub fn sum_axes(&self, keep: &[bool]) -> Var {
        Var::from_op(
            self.value().sum_axes(keep),
            Op::SumAxes(keep.to_vec()),
            vec![self.clone()],
        )
    }

    /// Replicate along the axes whose `keep` flag is false, producing `shape`.
    pub fn broadcast_axes(&self, shape: &[usize], keep: &[bool]) -> Var {
        Var::from_op(
            self.value().broadcast_axes(shape, keep),
            Op::BroadcastAxes(keep.to_vec()),
            vec![self.clone()],
        )
    }

    pub fn sum(&self) -> Var {
        self.sum_axes(&vec![false; self.shape().len()])
    }

    pub fn mean(&self) -> Var {
        let n = self.value().numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Per-entry sums over every axis except the leading one: `[N, ...] -> [N]`.
    pub fn sum_per_sample(&self) -> Var {
        let mut keep = vec![false; self.shape().len()];
        keep[0] = true;
        self.sum_axes(&keep)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var {
        Var::from_op(
            self.value().narrow(axis, start, len),
            Op::Narrow { axis, start },
            vec![self.clone()],
        )
    }

    fn embed(&self, axis: usize, start: usize, full: usize) -> Var {
        Var::from_op(
            self.value().embed(axis, start, full),
            Op::Embed { axis, start },
            vec![self.clone()],
        )
    }

    pub fn concat(items: &[Var], axis: usize) -> Var {
        let values: Vec<&Tensor> = items.iter().map(|v| v.value()).collect();
        Var::from_op(Tensor::concat(&values, axis), Op::Concat { axis }, items.to_vec())
    }

    pub fn conv2d(&self, weight: &Var, geom: ConvGeom) -> Var {
        Var::from_op(
            self.value().conv2d(weight.value(), geom),
            Op::Conv2d(geom),
            vec![self.clone(), weight.clone()],
        )
    }

    /// Transposed convolution; `weight` uses the `[C_in, C_out, KH, KW]`
    /// layout of the forward convolution it transposes.
    pub fn conv_transpose2d(&self, weight: &Var, out_h: usize, out_w: usize, geom: ConvGeom) -> Var {
        Var::from_op(
            self.value().conv2d_input_grad(weight.value(), out_h, out_w, geom),
            Op::ConvInputGrad(geom),
            vec![self.clone(), weight.clone()],
        )
    }

    fn conv_weight_grad(&self, grad: &Var, kh: usize, kw: usize, geom: ConvGeom) -> Var {
        Var::from_op(
            self.value().conv2d_weight_grad(grad.value(), kh, kw, geom),
            Op::ConvWeightGrad(geom),
            vec![self.clone(), grad.clone()],
        )
    }

    pub fn pad_replicate(&self, pad: usize) -> Var {
        Var::from_op(self.value().pad_replicate(pad), Op::PadReplicate(pad), vec![self.clone()])
    }

    fn pad_replicate_adjoint(&self, pad: usize) -> Var {
        Var::from_op(
            self.value().pad_replicate_adjoint(pad),
            Op::PadReplicateAdjoint(pad),
            vec![self.clone()],
        )
    }

    pub fn upsample_nearest(&self, factor: usize) -> Var {
        Var::from_op(
            self.value().upsample_nearest(factor),
            Op::UpsampleNearest(factor),
            vec![self.clone()],
        )
    }

    pub fn sum_pool(&self, factor: usize) -> Var {
        Var::from_op(self.value().sum_pool(factor), Op::SumPool(factor), vec![self.clone()])
    }

    fn mask_mul(&self, mask: Rc<Tensor>) -> Var {
        let value = self.value().zip_map(&mask, |a, m| a * m);
        Var::from_op(value, Op::MaskMul(mask), vec![self.clone()])
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let mask = self.value().map(|v| if v > 0.0 { 1.0 } else { slope });
        self.mask_mul(Rc::new(mask))
    }

    pub fn abs(&self) -> Var {
        let mask = self.value().map(|v| {
            if v > 0.0 {
                1.0
            } else if v < 0.0 {
                -1.0
            } else {
                0.0
            }
        });
        self.mask_mul(Rc::new(mask))
    }

    pub fn tanh(&self) -> Var {
        Var::from_op(self.value().map(f64::tanh), Op::Tanh, vec![self.clone()])
    }

    pub fn sigmoid(&self) -> Var {
        Var::from_op(
            self.value().map(|v| 1.0 / (1.0 + (-v).exp())),
            Op::Sigmoid,
            vec![self.clone()],
        )
    }

    /// Square root with a zero subgradient at zero.
    pub fn sqrt(&self) -> Var {
        Var::from_op(self.value().map(|v| v.max(0.0).sqrt()), Op::Sqrt, vec![self.clone()])
    }

    /// Reciprocal, defined as 0 at exactly 0.
    pub fn safe_recip(&self) -> Var {
        Var::from_op(
            self.value().map(|v| if v == 0.0 { 0.0 } else { 1.0 / v }),
            Op::SafeRecip,
            vec![self.clone()],
        )
    }

    /// Backward rule: gradients for each parent given the output gradient `g`.
    fn backward(&self, g: &Var) -> Vec<Var> {
        let node = &self.0;
        let p = &node.parents;
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add => vec![g.clone(), g.clone()],
            Op::Sub => vec![g.clone(), g.neg()],
            Op::Mul => vec![g.mul(&p[1]), g.mul(&p[0])],
            Op::Neg => vec![g.neg()],
            Op::Scale(c) => vec![g.scale(*c)],
            Op::AddScalar => vec![g.clone()],
            Op::MatMul => vec![
                g.matmul(&p[1].transpose()),
                p[0].transpose().matmul(g),
            ],
            Op::Transpose => vec![g.transpose()],
            Op::Reshape => vec![g.reshape(p[0].shape())],
            Op::SumAxes(keep) => vec![g.broadcast_axes(p[0].shape(), keep)],
            Op::BroadcastAxes(keep) => vec![g.sum_axes(keep)],
            Op::Narrow { axis, start } => vec![g.embed(*axis, *start, p[0].shape()[*axis])],
            Op::Embed { axis, start } => vec![g.narrow(*axis, *start, p[0].shape()[*axis])],
            Op::Concat { axis } => {
                let mut offset = 0;
                p.iter()
                    .map(|part| {
                        let len = part.shape()[*axis];
                        let piece = g.narrow(*axis, offset, len);
                        offset += len;
                        piece
                    })
                    .collect()
            }
            Op::Conv2d(geom) => {
                let (x, w) = (&p[0], &p[1]);
                let (h, wd) = (x.shape()[2], x.shape()[3]);
                let (kh, kw) = (w.shape()[2], w.shape()[3]);
                vec![
                    g.conv_transpose2d(w, h, wd, *geom),
                    x.conv_weight_grad(g, kh, kw, *geom),
                ]
            }
            Op::ConvInputGrad(geom) => {
                // Output is input-shaped; p[0] is the output-shaped gradient.
                let (dy, w) = (&p[0], &p[1]);
                let (kh, kw) = (w.shape()[2], w.shape()[3]);
                vec![g.conv2d(w, *geom), g.conv_weight_grad(dy, kh, kw, *geom)]
            }
            Op::ConvWeightGrad(geom) => {
                let (x, dy) = (&p[0], &p[1]);
                let (h, wd) = (x.shape()[2], x.shape()[3]);
                vec![dy.conv_transpose2d(g, h, wd, *geom), x.conv2d(g, *geom)]
            }
            Op::PadReplicate(pad) => vec![g.pad_replicate_adjoint(*pad)],
            Op::PadReplicateAdjoint(pad) => vec![g.pad_replicate(*pad)],
            Op::UpsampleNearest(f) => vec![g.sum_pool(*f)],
            Op::SumPool(f) => vec![g.upsample_nearest(*f)],
            Op::MaskMul(mask) => vec![g.mask_mul(mask.clone())],
            Op::Tanh => {
                let slope = self.square().neg().add_scalar(1.0);
                vec![g.mul(&slope)]
            }
            Op::Sigmoid => {
                let slope = self.mul(&self.neg().add_scalar(1.0));
                vec![g.mul(&slope)]
            }
            Op::Sqrt => vec![g.mul(&self.safe_recip().scale(0.5))],
            Op::SafeRecip => vec![g.mul(&self.square()).neg()],
        }
    }
}

/// Gradients of a scalar `output` with respect to each of `wrt`.
///
/// The returned gradients are graph nodes: when the inputs to the forward
/// computation required gradients, the results can be differentiated again.
/// Targets that `output` does not depend on get a zero gradient.
pub fn grad(output: &Var, wrt: &[Var]) -> Vec<Var> {
    assert_eq!(
        output.value().numel(),
        1,
        "grad() needs a scalar output, got shape {:?}",
        output.shape()
    );
    let targets: HashSet<u64> = wrt.iter().map(|v| v.0.id).collect();

    // Post-order over nodes that lie on a path to some target.
    let mut relevant: HashMap<u64, bool> = HashMap::new();
    let mut visited: HashSet<u64> = HashSet::new();
    let mut order: Vec<Var> = Vec::new();
    let mut stack: Vec<(Var, bool)> = vec![(output.clone(), false)];
    while let Some((v, expanded)) = stack.pop() {
        let id = v.0.id;
        if expanded {
            let reaches = targets.contains(&id)
                || v.0.parents.iter().any(|p| relevant.get(&p.0.id).copied().unwrap_or(false));
            relevant.insert(id, reaches);
            if reaches {
                order.push(v);
            }
            continue;
        }
        if !visited.insert(id) {
            continue;
        }
        if !v.0.requires_grad {
            relevant.insert(id, false);
            continue;
        }
        stack.push((v.clone(), true));
        for parent in &v.0.parents {
            if !visited.contains(&parent.0.id) {
                stack.push((parent.clone(), false));
            }
        }
    }

    let mut grads: HashMap<u64, Var> = HashMap::new();
    grads.insert(output.0.id, Var::constant(Tensor::ones(output.shape())));
    for node in order.iter().rev() {
        let Some(g) = grads.get(&node.0.id).cloned() else {
            continue;
        };
        if node.0.parents.is_empty() {
            continue;
        }
        let parent_grads = node.backward(&g);
        for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
            if !relevant.get(&parent.0.id).copied().unwrap_or(false) {
                continue;
            }
            let merged = match grads.remove(&parent.0.id) {
                Some(existing) => existing.add(&pg),
                None => pg,
            };
            grads.insert(parent.0.id, merged);
        }
    }

    wrt.iter()
        .map(|v| {
            grads
                .get(&v.0.id)
                .cloned()
                .unwrap_or_else(|| Var::constant(Tensor::zeros(v.shape())))
        })
        .collect()
}
