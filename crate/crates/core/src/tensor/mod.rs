//! Dense tensors and a minimal reverse-mode computation graph.
//!
//! A [`Graph`] is an immutable, topologically ordered list of nodes built
//! with [`GraphBuilder`]. Leaves are named inputs; interior nodes are one of
//! seven op kinds (matmul, add, ReLU, sigmoid, concatenate, reduce-sum,
//! squared error). [`Graph::evaluate`] binds inputs and runs the forward
//! pass into an [`Evaluation`], which owns every intermediate value and can
//! run the backward pass. Graphs hold no mutable state, so one graph can be
//! evaluated concurrently from several threads.

mod gradcheck;
mod kernels;

pub use gradcheck::{
    central_differences, compare_gradients, compare_gradients_with_floor, finite_diff_check,
    finite_diff_check_against, roundoff_floor, FdMismatch, FdReport, ABS_FALLBACK, ROUNDOFF_ULPS,
};

use std::borrow::Cow;
use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    Length {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("node {node} ({op}): {detail}")]
    Shape {
        node: String,
        op: &'static str,
        detail: String,
    },
    #[error("node {node} ({op}) produced a non-finite value at flat index {index}")]
    NonFinite {
        node: String,
        op: &'static str,
        index: usize,
    },
    #[error("input `{0}` is not bound")]
    Unbound(String),
    #[error("no node named `{0}`")]
    UnknownName(String),
    #[error("seed `{name}` must be scalar, found shape {shape:?}")]
    NonScalarSeed { name: String, shape: Vec<usize> },
    #[error("upstream gradient for `{name}` has shape {got:?}, output has {want:?}")]
    SeedShape {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense row-major array of `f64`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Length {
                shape,
                expected,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFiniteValue { index });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// `rows × cols` matrix from row-major values.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// `n × 1` column vector.
    pub fn column(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n, 1], data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[1]
        } else {
            1
        }
    }

    /// Entry `(r, c)` of a rank-2 tensor.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    /// Column `c` of a rank-2 tensor.
    pub fn column_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows()).map(|r| self.at(r, c)).collect()
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        Tensor::from_fn(c, r, |i, j| self.at(j, i))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Index of a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a matmul accumulates its contraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Accumulation {
    /// Blocked GEMM; summation order follows the kernel.
    Sequential,
    /// Nonzero products summed in ascending value order. Used where the
    /// contraction runs over graph nodes, so relabeling nodes cannot change
    /// any output bit.
    OrderInvariant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input { name: String, trainable: bool },
    MatMul(NodeId, NodeId, Accumulation),
    Add(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    /// Concatenation of rank-2 tensors along `axis` (0 = rows, 1 = columns).
    Concat(Vec<NodeId>, usize),
    ReduceSum(NodeId),
    /// Elementwise `(a - b)^2`.
    SquaredError(NodeId, NodeId),
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Concat(..) => "concat",
            Op::ReduceSum(_) => "reduce_sum",
            Op::SquaredError(..) => "squared_error",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } => Vec::new(),
            Op::MatMul(a, b, _) | Op::Add(a, b) | Op::SquaredError(a, b) => vec![*a, *b],
            Op::Relu(a) | Op::Sigmoid(a) | Op::ReduceSum(a) => vec![*a],
            Op::Concat(xs, _) => xs.clone(),
        }
    }
}

#[derive(Debug, Default)]
pub struct GraphBuilder {
    ops: Vec<Op>,
    names: HashMap<String, NodeId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        for operand in op.operands() {
            assert!(operand.0 < self.ops.len(), "operand refers to a later node");
        }
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    fn leaf(&mut self, name: &str, trainable: bool) -> NodeId {
        assert!(
            !self.names.contains_key(name),
            "duplicate node name `{name}`"
        );
        let id = self.push(Op::Input {
            name: name.to_string(),
            trainable,
        });
        self.names.insert(name.to_string(), id);
        id
    }

    /// Differentiable input leaf.
    pub fn input(&mut self, name: &str) -> NodeId {
        self.leaf(name, true)
    }

    /// Input leaf that never receives a gradient (masks, adjacency maps).
    pub fn constant(&mut self, name: &str) -> NodeId {
        self.leaf(name, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b, Accumulation::Sequential))
    }

    pub fn matmul_order_invariant(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b, Accumulation::OrderInvariant))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> NodeId {
        assert!(axis < 2, "concat supports axis 0 or 1");
        assert!(!parts.is_empty(), "concat needs at least one operand");
        self.push(Op::Concat(parts.to_vec(), axis))
    }

    pub fn reduce_sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::ReduceSum(a))
    }

    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::SquaredError(a, b))
    }

    /// Attach an output name to a node.
    pub fn name(&mut self, id: NodeId, name: &str) {
        assert!(
            !self.names.contains_key(name),
            "duplicate node name `{name}`"
        );
        self.names.insert(name.to_string(), id);
    }

    pub fn build(self) -> Graph {
        let mut needs_grad = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let flag = match op {
                Op::Input { trainable, .. } => *trainable,
                other => other.operands().iter().any(|o| needs_grad[o.0]),
            };
            needs_grad.push(flag);
        }
        let mut labels = vec![String::new(); self.ops.len()];
        for (name, id) in &self.names {
            if labels[id.0].is_empty() || matches!(self.ops[id.0], Op::Input { .. }) {
                labels[id.0] = name.clone();
            }
        }
        Graph {
            ops: self.ops,
            names: self.names,
            needs_grad,
            labels,
        }
    }
}

/// Immutable computation graph.
#[derive(Debug, Clone)]
pub struct Graph {
    ops: Vec<Op>,
    names: HashMap<String, NodeId>,
    needs_grad: Vec<bool>,
    labels: Vec<String>,
}

/// Named input tensors for one evaluation.
#[derive(Debug, Default, Clone)]
pub struct Bindings<'a> {
    map: HashMap<String, Cow<'a, Tensor>>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, name: &str, t: &'a Tensor) -> &mut Self {
        self.map.insert(name.to_string(), Cow::Borrowed(t));
        self
    }

    pub fn bind_owned(&mut self, name: &str, t: Tensor) -> &mut Self {
        self.map.insert(name.to_string(), Cow::Owned(t));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name).map(|c| c.as_ref())
    }
}

impl Graph {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn node(&self, name: &str) -> Result<NodeId> {
        self.names
            .get(name)
            .copied()
            .ok_or_else(|| TensorError::UnknownName(name.to_string()))
    }

    /// Names of differentiable input leaves, in node order.
    pub fn trainable_inputs(&self) -> Vec<&str> {
        self.ops
            .iter()
            .filter_map(|op| match op {
                Op::Input {
                    name,
                    trainable: true,
                } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    fn label(&self, id: usize) -> String {
        if self.labels[id].is_empty() {
            format!("#{id}")
        } else {
            format!("#{id} `{}`", self.labels[id])
        }
    }

    fn shape_err(&self, id: usize, detail: String) -> TensorError {
        TensorError::Shape {
            node: self.label(id),
            op: self.ops[id].kind(),
            detail,
        }
    }

    /// Forward pass. Deterministic: identical bindings give bit-identical
    /// values.
    pub fn evaluate<'a>(&'a self, bindings: &'a Bindings<'a>) -> Result<Evaluation<'a>> {
        let mut values: Vec<Cow<'a, Tensor>> = Vec::with_capacity(self.ops.len());
        for (id, op) in self.ops.iter().enumerate() {
            let value = match op {
                Op::Input { name, .. } => {
                    let t = bindings
                        .map
                        .get(name)
                        .ok_or_else(|| TensorError::Unbound(name.clone()))?;
                    Cow::Borrowed(t.as_ref())
                }
                _ => Cow::Owned(self.forward_op(id, op, &values)?),
            };
            if let Some(index) = value.data.iter().position(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite {
                    node: self.label(id),
                    op: op.kind(),
                    index,
                });
            }
            values.push(value);
        }
        Ok(Evaluation {
            graph: self,
            values,
        })
    }

    fn forward_op(&self, id: usize, op: &Op, values: &[Cow<'_, Tensor>]) -> Result<Tensor> {
        let v = |n: &NodeId| -> &Tensor { values[n.0].as_ref() };
        Ok(match op {
            Op::Input { .. } => unreachable!("inputs are bound, not computed"),
            Op::MatMul(a, b, acc) => {
                let (a, b) = (v(a), v(b));
                if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                    return Err(self.shape_err(
                        id,
                        format!("cannot multiply {:?} by {:?}", a.shape, b.shape),
                    ));
                }
                let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
                let mut out = Tensor::zeros(&[m, n]);
                match acc {
                    Accumulation::Sequential => kernels::gemm(
                        &a.data, m, k, false, &b.data, k, n, false, &mut out.data, false,
                    ),
                    Accumulation::OrderInvariant => {
                        kernels::gemm_order_invariant(&a.data, m, k, &b.data, n, &mut out.data)
                    }
                }
                out
            }
            Op::Add(a, b) | Op::SquaredError(a, b) => {
                let (a, b) = (v(a), v(b));
                if a.shape != b.shape {
                    return Err(self.shape_err(
                        id,
                        format!("operand shapes differ: {:?} vs {:?}", a.shape, b.shape),
                    ));
                }
                let data = if matches!(op, Op::Add(..)) {
                    a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect()
                } else {
                    a.data
                        .iter()
                        .zip(&b.data)
                        .map(|(x, y)| (x - y) * (x - y))
                        .collect()
                };
                Tensor {
                    shape: a.shape.clone(),
                    data,
                }
            }
            Op::Relu(a) => {
                let a = v(a);
                Tensor {
                    shape: a.shape.clone(),
                    data: a.data.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect(),
                }
            }
            Op::Sigmoid(a) => {
                let a = v(a);
                Tensor {
                    shape: a.shape.clone(),
                    data: a.data.iter().map(|&x| sigmoid(x)).collect(),
                }
            }
            Op::Concat(parts, axis) => {
                let parts: Vec<&Tensor> = parts.iter().map(v).collect();
                concat_forward(&parts, *axis).map_err(|d| self.shape_err(id, d))?
            }
            Op::ReduceSum(a) => Tensor::scalar(v(a).data.iter().sum()),
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn concat_forward(parts: &[&Tensor], axis: usize) -> std::result::Result<Tensor, String> {
    if parts.iter().any(|p| p.shape.len() != 2) {
        return Err("concat operands must be rank 2".into());
    }
    let other = 1 - axis;
    let fixed = parts[0].shape[other];
    if let Some(bad) = parts.iter().find(|p| p.shape[other] != fixed) {
        return Err(format!(
            "axis {other} extents differ: {fixed} vs {}",
            bad.shape[other]
        ));
    }
    let total: usize = parts.iter().map(|p| p.shape[axis]).sum();
    if axis == 0 {
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Tensor {
            shape: vec![total, fixed],
            data,
        })
    } else {
        let mut data = Vec::with_capacity(total * fixed);
        for r in 0..fixed {
            for p in parts {
                let c = p.shape[1];
                data.extend_from_slice(&p.data[r * c..(r + 1) * c]);
            }
        }
        Ok(Tensor {
            shape: vec![fixed, total],
            data,
        })
    }
}

/// Values of every node after a forward pass.
pub struct Evaluation<'a> {
    graph: &'a Graph,
    values: Vec<Cow<'a, Tensor>>,
}

impl<'a> Evaluation<'a> {
    pub fn value(&self, id: NodeId) -> &Tensor {
        self.values[id.0].as_ref()
    }

    pub fn output(&self, name: &str) -> Result<&Tensor> {
        Ok(self.value(self.graph.node(name)?))
    }

    /// Gradient of the scalar output `seed` with respect to every
    /// differentiable input.
    pub fn backward(&self, seed: &str) -> Result<Gradients> {
        let id = self.graph.node(seed)?;
        let out = self.value(id);
        if !out.is_scalar() {
            return Err(TensorError::NonScalarSeed {
                name: seed.to_string(),
                shape: out.shape.clone(),
            });
        }
        let one = Tensor::filled(&out.shape, 1.0);
        self.vjp(&[(seed, &one)])
    }

    /// Vector-Jacobian product: propagates the given upstream gradients of
    /// named outputs back to the differentiable inputs.
    pub fn vjp(&self, seeds: &[(&str, &Tensor)]) -> Result<Gradients> {
        let g = self.graph;
        let mut grads: Vec<Option<Tensor>> = vec![None; g.ops.len()];
        for (name, upstream) in seeds {
            let id = g.node(name)?;
            let want = &self.value(id).shape;
            if upstream.shape != *want && upstream.numel() != self.value(id).numel() {
                return Err(TensorError::SeedShape {
                    name: name.to_string(),
                    got: upstream.shape.clone(),
                    want: want.clone(),
                });
            }
            let up = Tensor {
                shape: want.clone(),
                data: upstream.data.clone(),
            };
            accumulate(&mut grads[id.0], up);
        }
        for id in (0..g.ops.len()).rev() {
            if !g.needs_grad[id] {
                continue;
            }
            let Some(grad) = grads[id].take() else {
                continue;
            };
            match &g.ops[id] {
                Op::Input { .. } => {
                    grads[id] = Some(grad);
                }
                op => self.backward_op(op, id, &grad, &mut grads),
            }
        }
        let mut by_name = HashMap::new();
        for (id, op) in g.ops.iter().enumerate() {
            if let Op::Input {
                name,
                trainable: true,
            } = op
            {
                let t = grads[id]
                    .take()
                    .unwrap_or_else(|| Tensor::zeros(&self.value(NodeId(id)).shape));
                by_name.insert(name.clone(), t);
            }
        }
        Ok(Gradients { by_name })
    }

    fn backward_op(&self, op: &Op, id: usize, grad: &Tensor, grads: &mut [Option<Tensor>]) {
        let needs = |n: &NodeId| self.graph.needs_grad[n.0];
        match op {
            Op::Input { .. } => {}
            Op::MatMul(a, b, _) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                if needs(a) {
                    // dA = G · Bᵀ
                    let mut da = Tensor::zeros(&[m, k]);
                    kernels::gemm(
                        &grad.data, m, n, false, &bv.data, k, n, true, &mut da.data, false,
                    );
                    accumulate(&mut grads[a.0], da);
                }
                if needs(b) {
                    // dB = Aᵀ · G
                    let mut db = Tensor::zeros(&[k, n]);
                    kernels::gemm(
                        &av.data, m, k, true, &grad.data, m, n, false, &mut db.data, false,
                    );
                    accumulate(&mut grads[b.0], db);
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    accumulate(&mut grads[a.0], grad.clone());
                }
                if needs(b) {
                    accumulate(&mut grads[b.0], grad.clone());
                }
            }
            Op::SquaredError(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let d: Vec<f64> = av
                    .data
                    .iter()
                    .zip(&bv.data)
                    .zip(&grad.data)
                    .map(|((x, y), g)| 2.0 * (x - y) * g)
                    .collect();
                if needs(b) {
                    let neg = Tensor {
                        shape: av.shape.clone(),
                        data: d.iter().map(|v| -v).collect(),
                    };
                    accumulate(&mut grads[b.0], neg);
                }
                if needs(a) {
                    accumulate(
                        &mut grads[a.0],
                        Tensor {
                            shape: av.shape.clone(),
                            data: d,
                        },
                    );
                }
            }
            Op::Relu(a) => {
                if needs(a) {
                    let x = self.value(*a);
                    let data = x
                        .data
                        .iter()
                        .zip(&grad.data)
                        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                        .collect();
                    accumulate(
                        &mut grads[a.0],
                        Tensor {
                            shape: x.shape.clone(),
                            data,
                        },
                    );
                }
            }
            Op::Sigmoid(a) => {
                if needs(a) {
                    let s = self.value(NodeId(id));
                    let data = s
                        .data
                        .iter()
                        .zip(&grad.data)
                        .map(|(&s, &g)| g * s * (1.0 - s))
                        .collect();
                    accumulate(
                        &mut grads[a.0],
                        Tensor {
                            shape: s.shape.clone(),
                            data,
                        },
                    );
                }
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.value(*p);
                    let (pr, pc) = (pv.shape[0], pv.shape[1]);
                    if needs(p) {
                        let piece = if *axis == 0 {
                            Tensor {
                                shape: pv.shape.clone(),
                                data: grad.data[offset * pc..(offset + pr) * pc].to_vec(),
                            }
                        } else {
                            let total = grad.shape[1];
                            Tensor::from_fn(pr, pc, |r, c| grad.data[r * total + offset + c])
                        };
                        accumulate(&mut grads[p.0], piece);
                    }
                    offset += if *axis == 0 { pr } else { pc };
                }
            }
            Op::ReduceSum(a) => {
                if needs(a) {
                    let shape = self.value(*a).shape.clone();
                    accumulate(&mut grads[a.0], Tensor::filled(&shape, grad.data[0]));
                }
            }
        }
    }

    /// ReLU activation pattern, one entry per ReLU input element. Used by
    /// the finite-difference checker to detect probes that straddle a kink.
    pub fn relu_pattern(&self) -> Vec<i8> {
        let mut pattern = Vec::new();
        for op in &self.graph.ops {
            if let Op::Relu(a) = op {
                pattern.extend(self.value(*a).data.iter().map(|&x| {
                    if x > 0.0 {
                        1
                    } else if x < 0.0 {
                        -1
                    } else {
                        0
                    }
                }));
            }
        }
        pattern
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Gradients keyed by input name.
#[derive(Debug, Clone)]
pub struct Gradients {
    by_name: HashMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.by_name.get_mut(name)
    }

    pub fn take(&mut self, name: &str) -> Option<Tensor> {
        self.by_name.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        Tensor::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn tensor_rejects_bad_length_and_nan() {
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0; 3]),
            Err(TensorError::Length { .. })
        ));
        assert!(matches!(
            Tensor::new(vec![1], vec![f64::NAN]),
            Err(TensorError::NonFiniteValue { index: 0 })
        ));
    }

    #[test]
    fn matmul_shape_algebra() {
        let mut b = GraphBuilder::new();
        let x = b.input("a");
        let y = b.input("b");
        let z = b.matmul(x, y);
        b.name(z, "out");
        let g = b.build();
        let (a, bb) = (mat(2, 3, &[1., 2., 3., 4., 5., 6.]), mat(3, 1, &[1., 0., -1.]));
        let mut bind = Bindings::new();
        bind.bind("a", &a).bind("b", &bb);
        let ev = g.evaluate(&bind).unwrap();
        let out = ev.output("out").unwrap();
        assert_eq!(out.shape(), &[2, 1]);
        assert_eq!(out.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn activations_at_reference_points() {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let s = b.sigmoid(x);
        let r = b.relu(x);
        b.name(s, "s");
        b.name(r, "r");
        let sum = b.reduce_sum(s);
        b.name(sum, "sum");
        let g = b.build();
        let x0 = mat(1, 3, &[0.0, -1.0, 2.0]);
        let mut bind = Bindings::new();
        bind.bind("x", &x0);
        let ev = g.evaluate(&bind).unwrap();
        assert_eq!(ev.output("s").unwrap().data()[0], 0.5);
        assert_eq!(ev.output("r").unwrap().data(), &[0.0, 0.0, 2.0]);
        let grads = ev.backward("sum").unwrap();
        assert_eq!(grads.get("x").unwrap().data()[0], 0.25);
    }

    #[test]
    fn shape_mismatch_names_the_node() {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let y = b.input("y");
        let z = b.add(x, y);
        b.name(z, "bad_sum");
        let g = b.build();
        let (x0, y0) = (Tensor::zeros(&[2, 2]), Tensor::zeros(&[2, 3]));
        let mut bind = Bindings::new();
        bind.bind("x", &x0).bind("y", &y0);
        let err = g.evaluate(&bind).err().unwrap();
        let msg = err.to_string();
        assert!(msg.contains("bad_sum"), "{msg}");
        assert!(msg.contains("add"), "{msg}");
    }

    #[test]
    fn non_finite_intermediate_is_an_error() {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let y = b.matmul(x, x);
        b.name(y, "square");
        let g = b.build();
        let x0 = mat(1, 1, &[1e200]);
        let mut bind = Bindings::new();
        bind.bind("x", &x0);
        assert!(matches!(
            g.evaluate(&bind),
            Err(TensorError::NonFinite { .. })
        ));
    }

    #[test]
    fn seed_must_be_scalar_and_unused_leaf_gets_zeros() {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let _unused = b.input("w");
        let r = b.relu(x);
        b.name(r, "r");
        let s = b.reduce_sum(r);
        b.name(s, "s");
        let g = b.build();
        let (x0, w0) = (mat(2, 2, &[1., -1., 2., 3.]), mat(3, 1, &[1., 2., 3.]));
        let mut bind = Bindings::new();
        bind.bind("x", &x0).bind("w", &w0);
        let ev = g.evaluate(&bind).unwrap();
        assert!(matches!(
            ev.backward("r"),
            Err(TensorError::NonScalarSeed { .. })
        ));
        let grads = ev.backward("s").unwrap();
        assert_eq!(grads.get("w").unwrap(), &Tensor::zeros(&[3, 1]));
        assert_eq!(grads.get("x").unwrap().data(), &[1., 0., 1., 1.]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let m = b.constant("mask");
        let y = b.matmul(x, m);
        let s = b.reduce_sum(y);
        b.name(s, "s");
        let g = b.build();
        let (x0, m0) = (mat(1, 2, &[1., 2.]), mat(2, 1, &[3., 4.]));
        let mut bind = Bindings::new();
        bind.bind("x", &x0).bind("mask", &m0);
        let grads = g.evaluate(&bind).unwrap().backward("s").unwrap();
        assert!(grads.get("mask").is_none());
        assert_eq!(grads.get("x").unwrap().data(), &[3., 4.]);
    }

    /// sum(A·B) wrt A is the row-broadcast of B's row sums.
    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut b = GraphBuilder::new();
        let a = b.input("A");
        let bb = b.input("B");
        let p = b.matmul(a, bb);
        let s = b.reduce_sum(p);
        b.name(s, "s");
        let g = b.build();
        let (a0, b0) = (random(&mut rng, 3, 4), random(&mut rng, 4, 2));
        let mut bind = Bindings::new();
        bind.bind("A", &a0).bind("B", &b0);
        let grads = g.evaluate(&bind).unwrap().backward("s").unwrap();
        let ga = grads.get("A").unwrap();
        for i in 0..3 {
            for k in 0..4 {
                let row_sum: f64 = (0..2).map(|j| b0.at(k, j)).sum();
                assert!((ga.at(i, k) - row_sum).abs() < 1e-12);
            }
        }
        for leaf in ["A", "B"] {
            let report = finite_diff_check(&g, &bind, "s", leaf, 1e-4, 1e-4).unwrap();
            assert!(report.passed, "{report:?}");
        }
    }

    fn all_ops_graph() -> Graph {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let w = b.input("w");
        let y = b.input("y");
        let h = b.matmul(w, x);
        let h = b.add(h, y);
        let r = b.relu(h);
        let s = b.sigmoid(h);
        let c0 = b.concat(&[r, s], 0);
        let c1 = b.concat(&[c0, c0], 1);
        let t = b.input("t");
        let e = b.squared_error(c1, t);
        let out = b.reduce_sum(e);
        b.name(out, "loss");
        b.build()
    }

    #[test]
    fn every_op_kind_passes_finite_differences() {
        let g = all_ops_graph();
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, w, y, t) = (
                random(&mut rng, 3, 2),
                random(&mut rng, 4, 3),
                random(&mut rng, 4, 2),
                random(&mut rng, 8, 4),
            );
            let mut bind = Bindings::new();
            bind.bind("x", &x).bind("w", &w).bind("y", &y).bind("t", &t);
            for leaf in ["x", "w", "y", "t"] {
                let report = finite_diff_check(&g, &bind, "loss", leaf, 1e-4, 1e-4).unwrap();
                assert!(report.passed, "seed {seed} leaf {leaf}: {report:?}");
            }
        }
    }

    #[test]
    fn evaluation_is_bitwise_reproducible() {
        let g = all_ops_graph();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, w, y, t) = (
            random(&mut rng, 3, 2),
            random(&mut rng, 4, 3),
            random(&mut rng, 4, 2),
            random(&mut rng, 8, 4),
        );
        let mut bind = Bindings::new();
        bind.bind("x", &x).bind("w", &w).bind("y", &y).bind("t", &t);
        let a = g.evaluate(&bind).unwrap().output("loss").unwrap().clone();
        let b = g.evaluate(&bind).unwrap().output("loss").unwrap().clone();
        assert_eq!(a.data()[0].to_bits(), b.data()[0].to_bits());
    }

    #[test]
    fn backward_is_linear_in_summed_seeds() {
        let mut b = GraphBuilder::new();
        let x = b.input("x");
        let w = b.input("w");
        let h = b.matmul(w, x);
        let s1 = b.sigmoid(h);
        let l1 = b.reduce_sum(s1);
        b.name(l1, "l1");
        let r = b.relu(h);
        let l2 = b.reduce_sum(r);
        b.name(l2, "l2");
        let both = b.concat(&[s1, r], 0);
        let l12 = b.reduce_sum(both);
        b.name(l12, "l12");
        let g = b.build();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x0, w0) = (random(&mut rng, 3, 2), random(&mut rng, 2, 3));
        let mut bind = Bindings::new();
        bind.bind("x", &x0).bind("w", &w0);
        let ev = g.evaluate(&bind).unwrap();
        let g1 = ev.backward("l1").unwrap();
        let g2 = ev.backward("l2").unwrap();
        let g12 = ev.backward("l12").unwrap();
        for name in ["x", "w"] {
            let (a, b2, c) = (g1.get(name).unwrap(), g2.get(name).unwrap(), g12.get(name).unwrap());
            for i in 0..a.numel() {
                assert!((a.data()[i] + b2.data()[i] - c.data()[i]).abs() < 1e-12);
            }
        }
    }
}
