//! Eager reverse-mode tape.
//!
//! Every op computes its value immediately and appends a node. `backward`
//! walks the nodes once in reverse, so the recording order is already a
//! topological order.

use std::sync::Arc;

use super::kernels::{self, BroadcastIndex};
use super::sparse::SparseMatrix;
use crate::error::{Result, TuvfError};
use crate::params::ParamStore;
use crate::tensor::{numel, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for ops implemented outside the tape (spectral solves,
/// nearest-neighbour losses, grid splatting).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product. Returns one entry per input; `None` for inputs
    /// that do not need a gradient (`needs[i] == false`) or receive none.
    fn backward(
        &self,
        inputs: &[&[f64]],
        output: &[f64],
        grad_output: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Softplus,
    Sqrt,
    Powf(f64),
    Abs,
    Scale(f64),
    Offset(f64),
    Sin,
    Cos,
    ClampMin(f64),
    Clamp(f64, f64),
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Neg => "neg",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Tanh => "tanh",
            UnaryKind::Relu => "relu",
            UnaryKind::LeakyRelu(_) => "leaky_relu",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Powf(_) => "power",
            UnaryKind::Abs => "abs",
            UnaryKind::Scale(_) => "scale",
            UnaryKind::Offset(_) => "offset",
            UnaryKind::Sin => "sin",
            UnaryKind::Cos => "cos",
            UnaryKind::ClampMin(_) => "clamp_min",
            UnaryKind::Clamp(..) => "clamp",
        }
    }

    fn eval(self, x: f64) -> f64 {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Sigmoid => kernels::sigmoid(x),
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            UnaryKind::Softplus => kernels::softplus(x),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Powf(p) => x.powf(p),
            UnaryKind::Abs => x.abs(),
            UnaryKind::Scale(c) => c * x,
            UnaryKind::Offset(c) => x + c,
            UnaryKind::Sin => x.sin(),
            UnaryKind::Cos => x.cos(),
            UnaryKind::ClampMin(c) => x.max(c),
            UnaryKind::Clamp(lo, hi) => x.clamp(lo, hi),
        }
    }

    /// dy/dx given input and output.
    fn deriv(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Neg => -1.0,
            UnaryKind::Exp => y,
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Tanh => 1.0 - y * y,
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            UnaryKind::Softplus => kernels::sigmoid(x),
            UnaryKind::Sqrt => {
                if y > 0.0 {
                    0.5 / y
                } else {
                    0.0
                }
            }
            UnaryKind::Powf(p) => p * x.powf(p - 1.0),
            UnaryKind::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Scale(c) => c,
            UnaryKind::Offset(_) => 1.0,
            UnaryKind::Sin => x.cos(),
            UnaryKind::Cos => -x.sin(),
            UnaryKind::ClampMin(c) => {
                if x > c {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Clamp(lo, hi) => {
                if x > lo && x < hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }
}

/// Axis decomposition `[outer, axis, inner]` used by reductions and slicing.
#[derive(Debug, Clone, Copy)]
struct AxisSplit {
    outer: usize,
    len: usize,
    inner: usize,
}

impl AxisSplit {
    fn new(shape: &[usize], axis: usize) -> Self {
        AxisSplit {
            outer: shape[..axis].iter().product(),
            len: shape[axis],
            inner: shape[axis + 1..].iter().product(),
        }
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Transpose { x: Var, rows: usize, cols: usize },
    Binary { kind: BinaryKind, a: Var, b: Var, ia: BroadcastIndex, ib: BroadcastIndex },
    Unary { kind: UnaryKind, x: Var },
    Sum { x: Var },
    SumAxis { x: Var, split: AxisSplit },
    MaxAxis { x: Var, argmax: Vec<usize> },
    Broadcast { x: Var, index: BroadcastIndex },
    Concat { parts: Vec<(Var, usize)>, outer: usize, inner: usize },
    Slice { x: Var, split: AxisSplit, start: usize, end: usize },
    Reshape { x: Var },
    RowNorm { x: Var, cols: usize },
    GatherRows { src: Var, indices: Vec<usize>, cols: usize },
    Sparse { x: Var, matrix: Arc<SparseMatrix> },
    Softmax { x: Var, cols: usize },
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub struct Tape {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never records gradient information. Used for renders
    /// whose outputs are only read.
    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape values are finite")
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<f64>, op: Op, inputs: &[Var]) -> Result<Var> {
        debug_assert_eq!(numel(&shape), value.len(), "{op_name}");
        if let Some(index) = value.iter().position(|v| !v.is_finite()) {
            return Err(TuvfError::NonFinite { op: op_name, index });
        }
        let requires_grad = self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            param: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, param: Option<String>) -> Result<Var> {
        if let Some(index) = value.iter().position(|v| !v.is_finite()) {
            return Err(TuvfError::NonFinite { op: "leaf", index });
        }
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad: requires_grad && self.grad_enabled,
            param,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, shape: &[usize], value: Vec<f64>) -> Result<Var> {
        if numel(shape) != value.len() {
            return Err(TuvfError::shape("constant", format!("{shape:?} vs {} values", value.len())));
        }
        self.push_leaf(shape.to_vec(), value, false, None)
    }

    pub fn constant_tensor(&mut self, t: &Tensor) -> Result<Var> {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), false, None)
    }

    /// Records a leaf; it is differentiable when `t.requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad, None)
    }

    /// Records the named parameter. Gradients flow back to it through
    /// [`ParamStore::accumulate`] when its `requires_grad` flag is set.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store.get(name)?;
        self.push_leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad, Some(name.to_string()))
    }

    /// Copies `x` into a new leaf that gradients do not cross.
    pub fn detach(&mut self, x: Var) -> Var {
        let n = &self.nodes[x.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push_leaf(shape, value, false, None).expect("value already finite")
    }

    /// Names of recorded parameters, in recording order.
    pub fn param_nodes(&self) -> impl Iterator<Item = (Var, &str)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.as_deref().map(|p| (Var(i), p)))
    }

    // ------------------------------------------------------------------ ops

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TuvfError::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = kernels::matmul(self.value(a), self.value(b), m, k, n);
        self.push("matmul", vec![m, n], value, Op::MatMul { a, b, m, k, n }, &[a, b])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(TuvfError::shape("transpose", format!("expected rank 2, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let value = kernels::transpose(self.value(x), rows, cols);
        self.push("transpose", vec![cols, rows], value, Op::Transpose { x, rows, cols }, &[x])
    }

    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = kernels::broadcast_shape(&sa, &sb)
            .ok_or_else(|| TuvfError::shape(kind.name(), format!("cannot broadcast {sa:?} with {sb:?}")))?;
        let ia = kernels::broadcast_index(&sa, &out_shape);
        let ib = kernels::broadcast_index(&sb, &out_shape);
        let (va, vb) = (self.value(a), self.value(b));
        let n = numel(&out_shape);
        let value: Vec<f64> = (0..n)
            .map(|i| {
                let (x, y) = (va[ia.at(i)], vb[ib.at(i)]);
                match kind {
                    BinaryKind::Add => x + y,
                    BinaryKind::Sub => x - y,
                    BinaryKind::Mul => x * y,
                    BinaryKind::Div => x / y,
                }
            })
            .collect();
        self.push(kind.name(), out_shape, value, Op::Binary { kind, a, b, ia, ib }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        let value: Vec<f64> = self.value(x).iter().map(|&v| kind.eval(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(kind.name(), shape, value, Op::Unary { kind, x }, &[x])
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Neg, x)
    }
    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Exp, x)
    }
    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Log, x)
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sigmoid, x)
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Tanh, x)
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(UnaryKind::LeakyRelu(slope), x)
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Softplus, x)
    }
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sqrt, x)
    }
    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary(UnaryKind::Powf(p), x)
    }
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Abs, x)
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryKind::Scale(c), x)
    }
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryKind::Offset(c), x)
    }

    pub fn sin(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Sin, x)
    }
    pub fn cos(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Cos, x)
    }
    /// `max(x, c)` elementwise.
    pub fn clamp_min(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary(UnaryKind::ClampMin(c), x)
    }

    /// `x` limited to `[lo, hi]`; zero gradient outside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(UnaryKind::Clamp(lo, hi), x)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.mul(x, x)
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).iter().sum();
        self.push("sum", vec![], vec![s], Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(TuvfError::shape("mean", "empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TuvfError::shape("sum_axis", format!("axis {axis} of {shape:?}")));
        }
        let split = AxisSplit::new(&shape, axis);
        let v = self.value(x);
        let mut out = vec![0.0; split.outer * split.inner];
        for o in 0..split.outer {
            for a in 0..split.len {
                let base = (o * split.len + a) * split.inner;
                for i in 0..split.inner {
                    out[o * split.inner + i] += v[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push("sum_axis", out_shape, out, Op::SumAxis { x, split }, &[x])
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| TuvfError::shape("mean_axis", "axis out of range"))?;
        let s = self.sum_axis(x, axis)?;
        self.scale(s, 1.0 / len as f64)
    }

    /// Max over `axis`, removing it. Ties route the gradient to the first maximum.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(TuvfError::shape("max_axis", format!("axis {axis} of {shape:?}")));
        }
        let split = AxisSplit::new(&shape, axis);
        let v = self.value(x);
        let mut out = vec![f64::NEG_INFINITY; split.outer * split.inner];
        let mut argmax = vec![0usize; out.len()];
        for o in 0..split.outer {
            for a in 0..split.len {
                let base = (o * split.len + a) * split.inner;
                for i in 0..split.inner {
                    let slot = o * split.inner + i;
                    if v[base + i] > out[slot] {
                        out[slot] = v[base + i];
                        argmax[slot] = base + i;
                    }
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        self.push("max_axis", out_shape, out, Op::MaxAxis { x, argmax }, &[x])
    }

    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let sx = self.shape(x).to_vec();
        match kernels::broadcast_shape(&sx, shape) {
            Some(s) if s == shape => {}
            _ => return Err(TuvfError::shape("broadcast", format!("{sx:?} -> {shape:?}"))),
        }
        let index = kernels::broadcast_index(&sx, shape);
        let v = self.value(x);
        let value = (0..numel(shape)).map(|i| v[index.at(i)]).collect();
        self.push("broadcast", shape.to_vec(), value, Op::Broadcast { x, index }, &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| TuvfError::shape("concat", "no inputs"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(TuvfError::shape("concat", format!("axis {axis} of {first:?}")));
        }
        let mut sizes = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TuvfError::shape("concat", format!("{s:?} vs {first:?} on axis {axis}")));
            }
            sizes.push((p, s[axis]));
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let total: usize = sizes.iter().map(|s| s.1).sum();
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &(p, len) in &sizes {
                let v = self.value(p);
                value.extend_from_slice(&v[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        self.push("concat", shape, value, Op::Concat { parts: sizes, outer, inner }, parts)
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(TuvfError::shape("slice", format!("{start}..{end} on axis {axis} of {shape:?}")));
        }
        let split = AxisSplit::new(&shape, axis);
        let v = self.value(x);
        let w = (end - start) * split.inner;
        let mut value = Vec::with_capacity(split.outer * w);
        for o in 0..split.outer {
            let base = (o * split.len + start) * split.inner;
            value.extend_from_slice(&v[base..base + w]);
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        self.push("slice", out_shape, value, Op::Slice { x, split, start, end }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(x).len() {
            return Err(TuvfError::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let value = self.value(x).to_vec();
        self.push("reshape", shape.to_vec(), value, Op::Reshape { x }, &[x])
    }

    /// L2 norm over the last axis. The gradient at a zero vector is zero.
    pub fn norm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| TuvfError::shape("norm", "scalar input"))?;
        let value: Vec<f64> = self
            .value(x)
            .chunks(cols.max(1))
            .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let out_shape = shape[..shape.len() - 1].to_vec();
        self.push("norm", out_shape, value, Op::RowNorm { x, cols }, &[x])
    }

    /// Rows of a rank-2 `src` selected by `indices`.
    pub fn gather_rows(&mut self, src: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(src);
        if s.len() != 2 {
            return Err(TuvfError::shape("gather_rows", format!("expected rank 2, got {s:?}")));
        }
        let (n, cols) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TuvfError::shape("gather_rows", format!("index {bad} >= {n}")));
        }
        let v = self.value(src);
        let mut value = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            value.extend_from_slice(&v[i * cols..(i + 1) * cols]);
        }
        let op = Op::GatherRows {
            src,
            indices: indices.to_vec(),
            cols,
        };
        self.push("gather_rows", vec![indices.len(), cols], value, op, &[src])
    }

    /// Applies a fixed sparse map along the last axis.
    pub fn sparse(&mut self, x: Var, matrix: Arc<SparseMatrix>) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| TuvfError::shape("sparse", "scalar input"))?;
        if cols != matrix.cols() {
            return Err(TuvfError::shape("sparse", format!("last axis {cols} vs matrix cols {}", matrix.cols())));
        }
        let value: Vec<f64> = self
            .value(x)
            .chunks(cols)
            .flat_map(|row| matrix.apply(row))
            .collect();
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = matrix.rows();
        self.push("sparse", out_shape, value, Op::Sparse { x, matrix }, &[x])
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let cols = *shape.last().ok_or_else(|| TuvfError::shape("softmax", "scalar input"))?;
        let mut value = Vec::with_capacity(self.value(x).len());
        for row in self.value(x).chunks(cols) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            value.extend(e.iter().map(|v| v / s));
        }
        self.push("softmax", shape, value, Op::Softmax { x, cols }, &[x])
    }

    /// Records a value computed outside the tape together with its backward rule.
    pub fn custom(&mut self, inputs: &[Var], shape: Vec<usize>, value: Vec<f64>, op: Box<dyn CustomOp>) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(TuvfError::shape(op.name(), "output length does not match shape"));
        }
        let name = op.name();
        let op = Op::Custom {
            inputs: inputs.to_vec(),
            op,
        };
        self.push(name, shape, value, op, inputs)
    }

    // ------------------------------------------------------------- backward

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(TuvfError::EmptyTape);
        }
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TuvfError::NotScalar(root.shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    /// Backward from `loss`, then accumulates parameter gradients into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        store.accumulate(self, &grads)?;
        Ok(grads)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let acc = |grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>| {
            match &mut grads[v.0] {
                Some(buf) => buf.iter_mut().zip(&contrib).for_each(|(b, c)| *b += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                if self.needs(*a) {
                    let bt = kernels::transpose(self.value(*b), k, n);
                    acc(grads, *a, kernels::matmul(g, &bt, m, n, k));
                }
                if self.needs(*b) {
                    let at = kernels::transpose(self.value(*a), m, k);
                    acc(grads, *b, kernels::matmul(&at, g, k, m, n));
                }
            }
            Op::Transpose { x, rows, cols } => {
                if self.needs(*x) {
                    acc(grads, *x, kernels::transpose(g, *cols, *rows));
                }
            }
            Op::Binary { kind, a, b, ia, ib } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let mut ga = vec![0.0; va.len()];
                    for (i, &gi) in g.iter().enumerate() {
                        let (ja, jb) = (ia.at(i), ib.at(i));
                        ga[ja] += match kind {
                            BinaryKind::Add | BinaryKind::Sub => gi,
                            BinaryKind::Mul => gi * vb[jb],
                            BinaryKind::Div => gi / vb[jb],
                        };
                    }
                    acc(grads, *a, ga);
                }
                if self.needs(*b) {
                    let mut gb = vec![0.0; vb.len()];
                    for (i, &gi) in g.iter().enumerate() {
                        let (ja, jb) = (ia.at(i), ib.at(i));
                        gb[jb] += match kind {
                            BinaryKind::Add => gi,
                            BinaryKind::Sub => -gi,
                            BinaryKind::Mul => gi * va[ja],
                            BinaryKind::Div => -gi * va[ja] / (vb[jb] * vb[jb]),
                        };
                    }
                    acc(grads, *b, gb);
                }
            }
            Op::Unary { kind, x } => {
                let vx = self.value(*x);
                let gx = g
                    .iter()
                    .zip(vx)
                    .zip(&node.value)
                    .map(|((gi, &xi), &yi)| gi * kind.deriv(xi, yi))
                    .collect();
                acc(grads, *x, gx);
            }
            Op::Sum { x } => {
                let n = self.value(*x).len();
                acc(grads, *x, vec![g[0]; n]);
            }
            Op::SumAxis { x, split } => {
                let mut gx = vec![0.0; split.outer * split.len * split.inner];
                for o in 0..split.outer {
                    for a in 0..split.len {
                        let base = (o * split.len + a) * split.inner;
                        gx[base..base + split.inner].copy_from_slice(&g[o * split.inner..(o + 1) * split.inner]);
                    }
                }
                acc(grads, *x, gx);
            }
            Op::MaxAxis { x, argmax, .. } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (slot, &src) in argmax.iter().enumerate() {
                    gx[src] += g[slot];
                }
                acc(grads, *x, gx);
            }
            Op::Broadcast { x, index } => {
                let mut gx = vec![0.0; self.value(*x).len()];
                for (i, &gi) in g.iter().enumerate() {
                    gx[index.at(i)] += gi;
                }
                acc(grads, *x, gx);
            }
            Op::Concat { parts, outer, inner } => {
                let total: usize = parts.iter().map(|p| p.1).sum();
                let mut offset = 0;
                for &(p, len) in parts {
                    if self.needs(p) {
                        let mut gp = Vec::with_capacity(outer * len * inner);
                        for o in 0..*outer {
                            let base = (o * total + offset) * inner;
                            gp.extend_from_slice(&g[base..base + len * inner]);
                        }
                        acc(grads, p, gp);
                    }
                    offset += len;
                }
            }
            Op::Slice { x, split, start, end } => {
                let mut gx = vec![0.0; split.outer * split.len * split.inner];
                let w = (end - start) * split.inner;
                for o in 0..split.outer {
                    let base = (o * split.len + start) * split.inner;
                    gx[base..base + w].copy_from_slice(&g[o * w..(o + 1) * w]);
                }
                acc(grads, *x, gx);
            }
            Op::Reshape { x } => acc(grads, *x, g.to_vec()),
            Op::RowNorm { x, cols } => {
                let vx = self.value(*x);
                let mut gx = vec![0.0; vx.len()];
                for (r, (&nr, &gr)) in node.value.iter().zip(g).enumerate() {
                    if nr > 0.0 {
                        for c in 0..*cols {
                            gx[r * cols + c] = gr * vx[r * cols + c] / nr;
                        }
                    }
                }
                acc(grads, *x, gx);
            }
            Op::GatherRows { src, indices, cols } => {
                let mut gs = vec![0.0; self.value(*src).len()];
                for (row, &i) in indices.iter().enumerate() {
                    let dst = &mut gs[i * cols..(i + 1) * cols];
                    for (d, gv) in dst.iter_mut().zip(&g[row * cols..(row + 1) * cols]) {
                        *d += gv;
                    }
                }
                acc(grads, *src, gs);
            }
            Op::Sparse { x, matrix } => {
                let cols = matrix.cols();
                let rows = matrix.rows();
                let mut gx = vec![0.0; self.value(*x).len()];
                for (gr, out) in g.chunks(rows).zip(gx.chunks_mut(cols)) {
                    matrix.apply_transpose_into(gr, out);
                }
                acc(grads, *x, gx);
            }
            Op::Softmax { x, cols } => {
                let mut gx = Vec::with_capacity(g.len());
                for (yr, gr) in node.value.chunks(*cols).zip(g.chunks(*cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, gv)| y * gv).sum();
                    gx.extend(yr.iter().zip(gr).map(|(y, gv)| y * (gv - dot)));
                }
                acc(grads, *x, gx);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&[f64]> = inputs.iter().map(|v| self.value(*v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|v| self.needs(*v)).collect();
                let out = op.backward(&values, &node.value, g, &needs);
                for (((v, gi), need), input) in inputs.iter().zip(out).zip(needs).zip(&values) {
                    if let (Some(gi), true) = (gi, need) {
                        if gi.len() != input.len() {
                            return Err(TuvfError::shape(op.name(), "backward returned wrong gradient length"));
                        }
                        if let Some(index) = gi.iter().position(|x| !x.is_finite()) {
                            return Err(TuvfError::NonFinite { op: op.name(), index });
                        }
                        acc(grads, *v, gi);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_example() {
        let mut tape = Tape::new();
        let a = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = tape.constant(&[2, 1], vec![1.0, 1.0]).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[3.0, 7.0]);
        assert_eq!(tape.shape(c), &[2, 1]);
    }

    #[test]
    fn sigmoid_of_zero() {
        let mut tape = Tape::new();
        let x = tape.constant(&[1], vec![0.0]).unwrap();
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.value(y), &[0.5]);
    }

    #[test]
    fn mean_of_ones() {
        let mut tape = Tape::new();
        let x = tape.constant(&[2562, 32], vec![1.0; 2562 * 32]).unwrap();
        let m = tape.mean(x).unwrap();
        assert_eq!(tape.scalar(m), 1.0);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[3], &[1.0, 2.0, 3.0]).with_grad()).unwrap();
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn grad_of_sigmoid_at_zero() {
        let mut tape = Tape::new();
        let w = tape.leaf(&t(&[1], &[0.0]).with_grad()).unwrap();
        let s = tape.sigmoid(w).unwrap();
        let loss = tape.sum(s).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).unwrap(), &[0.25]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2], &[1.0, 2.0]).with_grad()).unwrap();
        let y = tape.exp(x).unwrap();
        assert!(matches!(tape.backward(y), Err(TuvfError::NotScalar(_))));
    }

    #[test]
    fn backward_on_empty_tape() {
        let mut other = Tape::new();
        let v = other.constant(&[], vec![1.0]).unwrap();
        let empty = Tape::new();
        assert!(matches!(empty.backward(v), Err(TuvfError::EmptyTape)));
    }

    #[test]
    fn non_finite_forward_reports_op_and_index() {
        let mut tape = Tape::new();
        let x = tape.constant(&[3], vec![1.0, 0.0, 2.0]).unwrap();
        let err = tape.log(x).unwrap_err();
        assert!(matches!(err, TuvfError::NonFinite { op: "log", index: 1 }));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut tape = Tape::new();
        let a = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(TuvfError::ShapeMismatch { .. })));
        let c = tape.constant(&[4], vec![0.0; 4]).unwrap();
        assert!(matches!(tape.add(a, c), Err(TuvfError::ShapeMismatch { .. })));
    }

    #[test]
    fn norm_gradient_at_zero_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(&t(&[2, 3], &[0.0, 0.0, 0.0, 3.0, 4.0, 0.0]).with_grad()).unwrap();
        let n = tape.norm(x).unwrap();
        assert_eq!(tape.value(n), &[0.0, 5.0]);
        let loss = tape.sum(n).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.0, 0.0, 0.0, 0.6, 0.8, 0.0]);
    }

    #[test]
    fn inference_tape_records_no_grads() {
        let mut tape = Tape::inference();
        let x = tape.leaf(&t(&[1], &[2.0]).with_grad()).unwrap();
        let y = tape.exp(x).unwrap();
        let s = tape.sum(y).unwrap();
        assert!(!tape.requires_grad(s));
        assert!(tape.backward(s).unwrap().wrt(x).is_none());
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut tape = Tape::new();
        let a = tape.constant(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = tape.constant(&[2, 1], vec![5.0, 6.0]).unwrap();
        let c = tape.concat(&[a, b], 1).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let s = tape.slice(c, 1, 2, 3).unwrap();
        assert_eq!(tape.value(s), &[5.0, 6.0]);
    }
}
