//! Wengert-list tape for reverse-mode (and tangent forward-mode) differentiation.
//!
//! Every primitive appends one node holding its output value. Nodes only refer
//! to earlier nodes, so the list is topologically ordered by construction.
//! Values are computed by a single function ([`eval`]) both while recording
//! and during [`Tape::replay`], which keeps replays bitwise identical.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::ops;
use std::sync::atomic::{AtomicU64, Ordering};

use super::AdError;
use crate::tensor::{matmul_kernel, matmul_nt_acc, matmul_tn_acc, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Index of a node on its tape.
pub type NodeId = usize;

/// Primitive operation recorded on the tape.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Column means of a matrix: `N x d -> 1 x d`.
    MeanRows(NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { src: NodeId, axis: usize, start: usize, end: usize },
    Unary(UnaryKind, NodeId),
    Powf(NodeId, f64),
    /// Row-wise cross product of two `N x 3` matrices.
    Cross(NodeId, NodeId),
    /// Row-wise Euclidean norm: `N x k -> N x 1`.
    NormRows(NodeId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum UnaryKind {
    Relu,
    Silu,
    Tanh,
    Exp,
    Sqrt,
    Cos,
}

/// Operation family, used to target a [`GradientFault`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Add,
    Mul,
    MatMul,
    Sum,
    Mean,
    MeanRows,
    Concat,
    Slice,
    Relu,
    Silu,
    Tanh,
    Exp,
    Sqrt,
    Cos,
    Powf,
    Cross,
    NormRows,
}

impl Op {
    fn kind(&self) -> Option<OpKind> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add(..) => OpKind::Add,
            Op::Mul(..) => OpKind::Mul,
            Op::MatMul(..) => OpKind::MatMul,
            Op::Sum(_) => OpKind::Sum,
            Op::Mean(_) => OpKind::Mean,
            Op::MeanRows(_) => OpKind::MeanRows,
            Op::Concat { .. } => OpKind::Concat,
            Op::Slice { .. } => OpKind::Slice,
            Op::Unary(k, _) => match k {
                UnaryKind::Relu => OpKind::Relu,
                UnaryKind::Silu => OpKind::Silu,
                UnaryKind::Tanh => OpKind::Tanh,
                UnaryKind::Exp => OpKind::Exp,
                UnaryKind::Sqrt => OpKind::Sqrt,
                UnaryKind::Cos => OpKind::Cos,
            },
            Op::Powf(..) => OpKind::Powf,
            Op::Cross(..) => OpKind::Cross,
            Op::NormRows(_) => OpKind::NormRows,
        })
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::Cross(a, b) => vec![*a, *b],
            Op::Sum(a) | Op::Mean(a) | Op::MeanRows(a) | Op::NormRows(a) => vec![*a],
            Op::Unary(_, a) | Op::Powf(a, _) => vec![*a],
            Op::Slice { src, .. } => vec![*src],
            Op::Concat { parts, .. } => parts.clone(),
        }
    }
}

/// Negative-control hook: scales the reverse-mode rule of one primitive.
///
/// Only meant for exercising gradient checkers against a known-bad rule.
#[doc(hidden)]
#[derive(Clone, Copy, Debug)]
pub struct GradientFault {
    pub kind: OpKind,
    pub scale: f64,
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    value: Vec<f64>,
    /// Trainable leaf.
    param: bool,
    /// Some parameter is reachable from this node.
    requires_grad: bool,
}

/// Recording of one forward evaluation.
///
/// A tape is single-writer; distinct tapes are independent and may live on
/// different threads.
pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
    fault: Cell<Option<GradientFault>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape").field("id", &self.id).field("nodes", &self.len()).finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: NodeId,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradients of a scalar root with respect to the parameter leaves that
/// influence it.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(&var.id).map(Vec::as_slice)
    }

    pub fn get_id(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(&id).map(Vec::as_slice)
    }

    /// Gradient for `var`, or zeros when the root does not depend on it.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Vec<f64> {
        self.get(var).map_or_else(|| vec![0.0; var.numel()], <[f64]>::to_vec)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &[f64])> {
        self.grads.iter().map(|(k, v)| (*k, v.as_slice()))
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        2 => (shape[0], shape[1]),
        _ => panic!("expected a matrix, got shape {shape:?}"),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn unary_value(kind: UnaryKind, x: f64) -> f64 {
    match kind {
        UnaryKind::Relu => x.max(0.0),
        UnaryKind::Silu => x * sigmoid(x),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Exp => x.exp(),
        UnaryKind::Sqrt => x.sqrt(),
        UnaryKind::Cos => x.cos(),
    }
}

/// Derivative of a unary primitive at input `x` with output `y`.
fn unary_derivative(kind: UnaryKind, x: f64, y: f64) -> f64 {
    match kind {
        UnaryKind::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        UnaryKind::Silu => {
            let s = sigmoid(x);
            s * (1.0 + x * (1.0 - s))
        }
        UnaryKind::Tanh => 1.0 - y * y,
        UnaryKind::Exp => y,
        UnaryKind::Sqrt => 0.5 / y,
        UnaryKind::Cos => -x.sin(),
    }
}

fn cross3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Broadcast-aware elementwise combination of two values.
fn zip_broadcast(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
    } else if a.len() == 1 {
        b.iter().map(|y| f(a[0], *y)).collect()
    } else {
        a.iter().map(|x| f(*x, b[0])).collect()
    }
}

/// Output shape of a recorded op; panics on invalid shapes.
fn infer_shape(op: &Op, nodes: &[Node]) -> Vec<usize> {
    let shape = |id: NodeId| nodes[id].shape.clone();
    match op {
        Op::Leaf => unreachable!("leaves carry their own shape"),
        Op::Add(a, b) | Op::Mul(a, b) => {
            let (sa, sb) = (shape(*a), shape(*b));
            if sa == sb {
                sa
            } else if numel(&sa) == 1 {
                sb
            } else if numel(&sb) == 1 {
                sa
            } else {
                panic!("elementwise shape mismatch: {sa:?} vs {sb:?} (only scalar broadcasting is supported)")
            }
        }
        Op::MatMul(a, b) => {
            let (sa, sb) = (shape(*a), shape(*b));
            assert!(sa.len() == 2 && sb.len() == 2, "matmul needs matrices, got {sa:?} and {sb:?}");
            assert_eq!(sa[1], sb[0], "matmul inner dimension mismatch: {sa:?} x {sb:?}");
            vec![sa[0], sb[1]]
        }
        Op::Sum(_) | Op::Mean(_) => Vec::new(),
        Op::MeanRows(a) => {
            let s = shape(*a);
            assert_eq!(s.len(), 2, "mean_rows needs a matrix");
            assert!(s[0] > 0, "mean_rows over zero rows");
            vec![1, s[1]]
        }
        Op::Concat { parts, axis } => {
            assert!(!parts.is_empty(), "concat of nothing");
            let first = shape(parts[0]);
            assert_eq!(first.len(), 2, "concat needs matrices");
            let mut out = first.clone();
            out[*axis] = 0;
            for p in parts {
                let s = shape(*p);
                assert_eq!(s.len(), 2, "concat needs matrices");
                assert_eq!(s[1 - axis], first[1 - axis], "concat shape mismatch: {first:?} vs {s:?}");
                out[*axis] += s[*axis];
            }
            out
        }
        Op::Slice { src, axis, start, end } => {
            let mut s = shape(*src);
            assert_eq!(s.len(), 2, "slice needs a matrix");
            assert!(start <= end && *end <= s[*axis], "slice {start}..{end} out of range for {s:?}");
            s[*axis] = end - start;
            s
        }
        Op::Unary(_, a) | Op::Powf(a, _) => shape(*a),
        Op::Cross(a, b) => {
            let (sa, sb) = (shape(*a), shape(*b));
            assert!(sa == sb && sa.len() == 2 && sa[1] == 3, "cross needs matching N x 3 inputs");
            sa
        }
        Op::NormRows(a) => {
            let s = shape(*a);
            assert_eq!(s.len(), 2, "norm_rows needs a matrix");
            vec![s[0], 1]
        }
    }
}

/// Forward value of an op from its parents' values.
fn eval(op: &Op, nodes: &[Node]) -> Vec<f64> {
    let val = |id: NodeId| nodes[id].value.as_slice();
    match op {
        Op::Leaf => unreachable!(),
        Op::Add(a, b) => zip_broadcast(val(*a), val(*b), |x, y| x + y),
        Op::Mul(a, b) => zip_broadcast(val(*a), val(*b), |x, y| x * y),
        Op::MatMul(a, b) => {
            let (m, k) = rows_cols(&nodes[*a].shape);
            let n = nodes[*b].shape[1];
            matmul_kernel(val(*a), val(*b), m, k, n)
        }
        Op::Sum(a) => vec![val(*a).iter().sum()],
        Op::Mean(a) => {
            let v = val(*a);
            vec![v.iter().sum::<f64>() / v.len() as f64]
        }
        Op::MeanRows(a) => {
            // Column sums in sorted order so the result does not depend on
            // the order of the rows.
            let (r, c) = rows_cols(&nodes[*a].shape);
            let v = val(*a);
            let mut col = vec![0.0; r];
            (0..c)
                .map(|j| {
                    for i in 0..r {
                        col[i] = v[i * c + j];
                    }
                    col.sort_by(f64::total_cmp);
                    col.iter().sum::<f64>() / r as f64
                })
                .collect()
        }
        Op::Concat { parts, axis } => {
            if *axis == 0 {
                parts.iter().flat_map(|p| val(*p).iter().copied()).collect()
            } else {
                let rows = nodes[parts[0]].shape[0];
                let mut out = Vec::new();
                for i in 0..rows {
                    for p in parts {
                        let c = nodes[*p].shape[1];
                        out.extend_from_slice(&val(*p)[i * c..(i + 1) * c]);
                    }
                }
                out
            }
        }
        Op::Slice { src, axis, start, end } => {
            let (r, c) = rows_cols(&nodes[*src].shape);
            let v = val(*src);
            if *axis == 0 {
                v[start * c..end * c].to_vec()
            } else {
                let mut out = Vec::with_capacity(r * (end - start));
                for i in 0..r {
                    out.extend_from_slice(&v[i * c + start..i * c + end]);
                }
                out
            }
        }
        Op::Unary(kind, a) => val(*a).iter().map(|&x| unary_value(*kind, x)).collect(),
        Op::Powf(a, p) => val(*a).iter().map(|&x| x.powf(*p)).collect(),
        Op::Cross(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            va.chunks(3).zip(vb.chunks(3)).flat_map(|(x, y)| cross3(x, y)).collect()
        }
        Op::NormRows(a) => {
            let (_, c) = rows_cols(&nodes[*a].shape);
            val(*a).chunks(c.max(1)).map(|row| row.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
            fault: Cell::new(None),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn var(&self, id: NodeId) -> Var<'_> {
        Var { tape: self, id }
    }

    /// Handle for an existing node, e.g. one whose id was stored earlier.
    pub fn var_by_id(&self, id: NodeId) -> Var<'_> {
        assert!(id < self.len(), "node {id} is not on this tape");
        self.var(id)
    }

    fn leaf(&self, t: Tensor, param: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let shape = t.shape().to_vec();
        nodes.push(Node { op: Op::Leaf, shape, value: t.into_data(), param, requires_grad: param });
        drop(nodes);
        self.var(id)
    }

    /// Trainable leaf: receives a gradient in [`Tape::backward`].
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.leaf(t, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    pub fn zeros(&self, shape: impl Into<Vec<usize>>) -> Var<'_> {
        self.constant(Tensor::zeros(shape))
    }

    pub fn ones(&self, shape: impl Into<Vec<usize>>) -> Var<'_> {
        self.constant(Tensor::full(shape, 1.0))
    }

    fn push(&self, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let shape = infer_shape(&op, &nodes);
        let value = eval(&op, &nodes);
        debug_assert_eq!(value.len(), numel(&shape));
        let requires_grad = op.parents().iter().any(|p| nodes[*p].requires_grad);
        let id = nodes.len();
        nodes.push(Node { op, shape, value, param: false, requires_grad });
        drop(nodes);
        self.var(id)
    }

    pub fn value(&self, var: Var<'_>) -> Tensor {
        self.check_owner(var);
        let nodes = self.nodes.borrow();
        let n = &nodes[var.id];
        Tensor::new(n.shape.clone(), n.value.clone())
    }

    pub fn shape_of(&self, id: NodeId) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }

    fn check_owner(&self, var: Var<'_>) {
        assert!(std::ptr::eq(self, var.tape), "variable belongs to a different tape");
    }

    /// Every node's parents precede it.
    pub fn is_topologically_ordered(&self) -> bool {
        self.nodes.borrow().iter().enumerate().all(|(i, n)| n.op.parents().iter().all(|p| *p < i))
    }

    /// Overwrites a leaf's value. Call [`Tape::replay`] to propagate it.
    ///
    /// # Panics
    ///
    /// Panics if `var` is not a leaf or the length differs.
    pub fn set_leaf(&self, var: Var<'_>, data: &[f64]) {
        self.check_owner(var);
        let mut nodes = self.nodes.borrow_mut();
        let n = &mut nodes[var.id];
        assert!(matches!(n.op, Op::Leaf), "set_leaf on a non-leaf node");
        assert_eq!(n.value.len(), data.len(), "set_leaf length mismatch");
        n.value.copy_from_slice(data);
    }

    /// Recomputes every non-leaf node in recording order from the current
    /// leaf values.
    pub fn replay(&self) {
        let mut nodes = self.nodes.borrow_mut();
        for i in 0..nodes.len() {
            if matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let value = eval(&nodes[i].op, &nodes);
            nodes[i].value = value;
        }
    }

    #[doc(hidden)]
    pub fn set_gradient_fault(&self, fault: Option<GradientFault>) {
        self.fault.set(fault);
    }

    /// Gradient of a scalar `root` with respect to every reachable parameter.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients, AdError> {
        if !std::ptr::eq(self, root.tape) {
            return Err(AdError::DetachedRoot);
        }
        let shape = self.shape_of(root.id);
        if numel(&shape) != 1 {
            return Err(AdError::NonScalarRoot { shape });
        }
        Ok(self.reverse_sweep(root.id, vec![1.0]))
    }

    /// Vector-Jacobian product: gradients of `⟨output, seed⟩`.
    pub fn backward_with_seed(&self, output: Var<'_>, seed: &[f64]) -> Result<Gradients, AdError> {
        if !std::ptr::eq(self, output.tape) {
            return Err(AdError::DetachedRoot);
        }
        let n = output.numel();
        if seed.len() != n {
            return Err(AdError::DimensionMismatch { expected: n, found: seed.len() });
        }
        Ok(self.reverse_sweep(output.id, seed.to_vec()))
    }

    fn reverse_sweep(&self, root: NodeId, seed: Vec<f64>) -> Gradients {
        let nodes = self.nodes.borrow();
        let fault = self.fault.get();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        adj[root] = Some(seed);
        let mut grads = HashMap::new();
        for i in (0..=root).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.param {
                grads.insert(i, g);
                continue;
            }
            let scale = match (fault, node.op.kind()) {
                (Some(f), Some(k)) if f.kind == k => f.scale,
                _ => 1.0,
            };
            let g = if scale != 1.0 { g.iter().map(|x| x * scale).collect() } else { g };
            backprop_node(&nodes, i, &g, &mut adj);
        }
        Gradients { grads }
    }

    /// Jacobian-vector product by a forward tangent sweep.
    ///
    /// `seeds` assigns tangent vectors to leaves; leaves without a seed have
    /// zero tangent. Returns the tangent of `output`.
    pub fn forward_tangent(&self, seeds: &[(Var<'_>, &[f64])], output: Var<'_>) -> Result<Vec<f64>, AdError> {
        if !std::ptr::eq(self, output.tape) {
            return Err(AdError::DetachedRoot);
        }
        let nodes = self.nodes.borrow();
        let mut tan: Vec<Option<Vec<f64>>> = vec![None; output.id + 1];
        for (v, t) in seeds {
            self.check_owner(*v);
            let n = nodes[v.id].value.len();
            if t.len() != n {
                return Err(AdError::DimensionMismatch { expected: n, found: t.len() });
            }
            if v.id <= output.id {
                tan[v.id] = Some(t.to_vec());
            }
        }
        for i in 0..=output.id {
            if matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            tan[i] = tangent_node(&nodes, i, &tan);
        }
        Ok(tan[output.id].take().unwrap_or_else(|| vec![0.0; nodes[output.id].value.len()]))
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], id: NodeId, len: usize, f: impl FnOnce(&mut [f64])) {
    let slot = adj[id].get_or_insert_with(|| vec![0.0; len]);
    f(slot);
}

/// Reduces a gradient to a broadcast scalar operand when needed.
fn add_broadcast_grad(adj: &mut [Option<Vec<f64>>], nodes: &[Node], id: NodeId, contrib: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    let len = nodes[id].value.len();
    if len == contrib.len() {
        accumulate(adj, id, len, |s| s.iter_mut().zip(&contrib).for_each(|(x, c)| *x += c));
    } else {
        let total: f64 = contrib.iter().sum();
        accumulate(adj, id, len, |s| s[0] += total);
    }
}

fn backprop_node(nodes: &[Node], i: NodeId, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
    let node = &nodes[i];
    let val = |id: NodeId| nodes[id].value.as_slice();
    let rg = |id: NodeId| nodes[id].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            add_broadcast_grad(adj, nodes, *a, g.to_vec());
            add_broadcast_grad(adj, nodes, *b, g.to_vec());
        }
        Op::Mul(a, b) => {
            if rg(*a) {
                add_broadcast_grad(adj, nodes, *a, zip_broadcast(g, val(*b), |x, y| x * y));
            }
            if rg(*b) {
                add_broadcast_grad(adj, nodes, *b, zip_broadcast(g, val(*a), |x, y| x * y));
            }
        }
        Op::MatMul(a, b) => {
            let (m, k) = rows_cols(&nodes[*a].shape);
            let n = nodes[*b].shape[1];
            if rg(*a) {
                let bv = val(*b);
                accumulate(adj, *a, m * k, |s| matmul_nt_acc(s, g, bv, m, k, n));
            }
            if rg(*b) {
                let av = val(*a);
                accumulate(adj, *b, k * n, |s| matmul_tn_acc(s, av, g, m, k, n));
            }
        }
        Op::Sum(a) => {
            let len = nodes[*a].value.len();
            accumulate(adj, *a, len, |s| s.iter_mut().for_each(|x| *x += g[0]));
        }
        Op::Mean(a) => {
            let len = nodes[*a].value.len();
            let c = g[0] / len as f64;
            accumulate(adj, *a, len, |s| s.iter_mut().for_each(|x| *x += c));
        }
        Op::MeanRows(a) => {
            let (r, c) = rows_cols(&nodes[*a].shape);
            accumulate(adj, *a, r * c, |s| {
                for row in s.chunks_mut(c) {
                    for (x, gv) in row.iter_mut().zip(g) {
                        *x += gv / r as f64;
                    }
                }
            });
        }
        Op::Concat { parts, axis } => {
            if *axis == 0 {
                let mut off = 0;
                for p in parts {
                    let len = nodes[*p].value.len();
                    if rg(*p) {
                        accumulate(adj, *p, len, |s| {
                            s.iter_mut().zip(&g[off..off + len]).for_each(|(x, gv)| *x += gv)
                        });
                    }
                    off += len;
                }
            } else {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut col = 0;
                for p in parts {
                    let c = nodes[*p].shape[1];
                    if rg(*p) {
                        accumulate(adj, *p, rows * c, |s| {
                            for r in 0..rows {
                                for j in 0..c {
                                    s[r * c + j] += g[r * total + col + j];
                                }
                            }
                        });
                    }
                    col += c;
                }
            }
        }
        Op::Slice { src, axis, start, end } => {
            let (r, c) = rows_cols(&nodes[*src].shape);
            accumulate(adj, *src, r * c, |s| {
                if *axis == 0 {
                    s[start * c..end * c].iter_mut().zip(g).for_each(|(x, gv)| *x += gv);
                } else {
                    let w = end - start;
                    for i in 0..r {
                        for j in 0..w {
                            s[i * c + start + j] += g[i * w + j];
                        }
                    }
                }
            });
        }
        Op::Unary(kind, a) => {
            let (x, y) = (val(*a), node.value.as_slice());
            let len = x.len();
            accumulate(adj, *a, len, |s| {
                for j in 0..len {
                    s[j] += g[j] * unary_derivative(*kind, x[j], y[j]);
                }
            });
        }
        Op::Powf(a, p) => {
            let x = val(*a);
            accumulate(adj, *a, x.len(), |s| {
                for j in 0..x.len() {
                    s[j] += g[j] * p * x[j].powf(p - 1.0);
                }
            });
        }
        Op::Cross(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            if rg(*a) {
                accumulate(adj, *a, va.len(), |s| {
                    for r in 0..va.len() / 3 {
                        let c = cross3(&vb[3 * r..3 * r + 3], &g[3 * r..3 * r + 3]);
                        (0..3).for_each(|j| s[3 * r + j] += c[j]);
                    }
                });
            }
            if rg(*b) {
                accumulate(adj, *b, vb.len(), |s| {
                    for r in 0..vb.len() / 3 {
                        let c = cross3(&g[3 * r..3 * r + 3], &va[3 * r..3 * r + 3]);
                        (0..3).for_each(|j| s[3 * r + j] += c[j]);
                    }
                });
            }
        }
        Op::NormRows(a) => {
            let (r, c) = rows_cols(&nodes[*a].shape);
            let (x, y) = (val(*a), node.value.as_slice());
            accumulate(adj, *a, r * c, |s| {
                for i in 0..r {
                    if y[i] == 0.0 {
                        continue;
                    }
                    for j in 0..c {
                        s[i * c + j] += g[i] * x[i * c + j] / y[i];
                    }
                }
            });
        }
    }
}

fn tangent_node(nodes: &[Node], i: NodeId, tan: &[Option<Vec<f64>>]) -> Option<Vec<f64>> {
    let node = &nodes[i];
    if node.op.parents().iter().all(|p| tan[*p].is_none()) {
        return None;
    }
    let val = |id: NodeId| nodes[id].value.as_slice();
    let len = node.value.len();
    let zeros = |id: NodeId| vec![0.0; nodes[id].value.len()];
    let t = |id: NodeId| tan[id].clone().unwrap_or_else(|| zeros(id));
    let out = match &node.op {
        Op::Leaf => unreachable!(),
        Op::Add(a, b) => zip_broadcast(&t(*a), &t(*b), |x, y| x + y),
        Op::Mul(a, b) => {
            let lhs = zip_broadcast(&t(*a), val(*b), |x, y| x * y);
            let rhs = zip_broadcast(val(*a), &t(*b), |x, y| x * y);
            lhs.iter().zip(&rhs).map(|(x, y)| x + y).collect()
        }
        Op::MatMul(a, b) => {
            let (m, k) = rows_cols(&nodes[*a].shape);
            let n = nodes[*b].shape[1];
            let mut out = vec![0.0; m * n];
            if let Some(ta) = &tan[*a] {
                let p = matmul_kernel(ta, val(*b), m, k, n);
                out.iter_mut().zip(&p).for_each(|(x, y)| *x += y);
            }
            if let Some(tb) = &tan[*b] {
                let p = matmul_kernel(val(*a), tb, m, k, n);
                out.iter_mut().zip(&p).for_each(|(x, y)| *x += y);
            }
            out
        }
        Op::Sum(a) => vec![t(*a).iter().sum()],
        Op::Mean(a) => {
            let ta = t(*a);
            vec![ta.iter().sum::<f64>() / ta.len() as f64]
        }
        Op::MeanRows(a) => {
            let (r, c) = rows_cols(&nodes[*a].shape);
            let ta = t(*a);
            (0..c).map(|j| (0..r).map(|i| ta[i * c + j]).sum::<f64>() / r as f64).collect()
        }
        Op::Concat { parts, axis } => {
            if *axis == 0 {
                parts.iter().flat_map(|p| t(*p)).collect()
            } else {
                let rows = node.shape[0];
                let parts_t: Vec<(usize, Vec<f64>)> = parts.iter().map(|p| (nodes[*p].shape[1], t(*p))).collect();
                let mut out = Vec::with_capacity(len);
                for r in 0..rows {
                    for (c, tp) in &parts_t {
                        out.extend_from_slice(&tp[r * c..(r + 1) * c]);
                    }
                }
                out
            }
        }
        Op::Slice { src, axis, start, end } => {
            let (r, c) = rows_cols(&nodes[*src].shape);
            let ts = t(*src);
            if *axis == 0 {
                ts[start * c..end * c].to_vec()
            } else {
                (0..r).flat_map(|i| ts[i * c + start..i * c + end].to_vec()).collect()
            }
        }
        Op::Unary(kind, a) => {
            let (x, y, ta) = (val(*a), node.value.as_slice(), t(*a));
            (0..len).map(|j| ta[j] * unary_derivative(*kind, x[j], y[j])).collect()
        }
        Op::Powf(a, p) => {
            let (x, ta) = (val(*a), t(*a));
            (0..len).map(|j| ta[j] * p * x[j].powf(p - 1.0)).collect()
        }
        Op::Cross(a, b) => {
            let (va, vb, ta, tb) = (val(*a), val(*b), t(*a), t(*b));
            let mut out = Vec::with_capacity(len);
            for r in 0..len / 3 {
                let s = 3 * r..3 * r + 3;
                let c1 = cross3(&ta[s.clone()], &vb[s.clone()]);
                let c2 = cross3(&va[s.clone()], &tb[s]);
                out.extend((0..3).map(|j| c1[j] + c2[j]));
            }
            out
        }
        Op::NormRows(a) => {
            let (r, c) = rows_cols(&nodes[*a].shape);
            let (x, y, ta) = (val(*a), node.value.as_slice(), t(*a));
            (0..r)
                .map(|i| {
                    if y[i] == 0.0 {
                        0.0
                    } else {
                        (0..c).map(|j| x[i * c + j] * ta[i * c + j]).sum::<f64>() / y[i]
                    }
                })
                .collect()
        }
    };
    Some(out)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.shape_of(self.id)
    }

    pub fn numel(&self) -> usize {
        numel(&self.shape())
    }

    pub fn value(&self) -> Tensor {
        self.tape.value(*self)
    }

    /// The single value of a one-element variable.
    pub fn item(&self) -> f64 {
        let v = self.value();
        assert_eq!(v.numel(), 1, "item() on a non-scalar of shape {:?}", v.shape());
        v.data()[0]
    }

    fn same_tape(&self, other: Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "variables live on different tapes");
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        self.tape.push(Op::MatMul(self.id, other.id))
    }

    /// Sum of all elements (scalar).
    pub fn sum(self) -> Var<'t> {
        self.tape.push(Op::Sum(self.id))
    }

    /// Mean of all elements (scalar).
    pub fn mean(self) -> Var<'t> {
        self.tape.push(Op::Mean(self.id))
    }

    /// Column means: `N x d -> 1 x d`.
    pub fn mean_rows(self) -> Var<'t> {
        self.tape.push(Op::MeanRows(self.id))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        self.tape.push(Op::Slice { src: self.id, axis: 1, start, end })
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(self, start: usize, end: usize) -> Var<'t> {
        self.tape.push(Op::Slice { src: self.id, axis: 0, start, end })
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.push(Op::Unary(UnaryKind::Relu, self.id))
    }

    pub fn silu(self) -> Var<'t> {
        self.tape.push(Op::Unary(UnaryKind::Silu, self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.push(Op::Unary(UnaryKind::Tanh, self.id))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.push(Op::Unary(UnaryKind::Exp, self.id))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape.push(Op::Unary(UnaryKind::Sqrt, self.id))
    }

    pub fn cos(self) -> Var<'t> {
        self.tape.push(Op::Unary(UnaryKind::Cos, self.id))
    }

    /// Elementwise power with a constant exponent.
    pub fn powf(self, p: f64) -> Var<'t> {
        self.tape.push(Op::Powf(self.id, p))
    }

    pub fn square(self) -> Var<'t> {
        self * self
    }

    /// Row-wise cross product of two `N x 3` matrices.
    pub fn cross(self, other: Var<'t>) -> Var<'t> {
        self.same_tape(other);
        self.tape.push(Op::Cross(self.id, other.id))
    }

    /// Row-wise L2 norm: `N x k -> N x 1`.
    pub fn norm_rows(self) -> Var<'t> {
        self.tape.push(Op::NormRows(self.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let s = self.tape.scalar(c);
        self.tape.push(Op::Mul(self.id, s.id))
    }

    /// Repeats a `1 x d` row `n` times: `ones(n x 1) · self`.
    pub fn broadcast_rows(self, n: usize) -> Var<'t> {
        self.tape.ones([n, 1]).matmul(self)
    }

    /// Repeats an `N x 1` column `d` times: `self · ones(1 x d)`.
    pub fn broadcast_cols(self, d: usize) -> Var<'t> {
        self.matmul(self.tape.ones([1, d]))
    }
}

/// Concatenates matrices along `axis` (0 = rows, 1 = columns).
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Var<'t> {
    assert!(axis < 2, "concat axis must be 0 or 1");
    let tape = parts.first().expect("concat of nothing").tape;
    for p in parts {
        assert!(std::ptr::eq(tape, p.tape), "variables live on different tapes");
    }
    tape.push(Op::Concat { parts: parts.iter().map(|p| p.id).collect(), axis })
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        self.tape.push(Op::Add(self.id, rhs.id))
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_tape(rhs);
        self.tape.push(Op::Mul(self.id, rhs.id))
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self + (-rhs)
    }
}

impl<'t> ops::Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.scale(rhs)
    }
}

impl<'t> ops::Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        let s = self.tape.scalar(rhs);
        self + s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_gradient_is_twice_input() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(vec![1.0, 2.0, 3.0]));
        let y = (x * x).sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_root_has_no_gradients() {
        let tape = Tape::new();
        let c = tape.scalar(5.0);
        let g = tape.backward(c).unwrap();
        assert!(g.is_empty());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x * x), Err(AdError::NonScalarRoot { .. })));
    }

    #[test]
    fn root_from_another_tape_is_rejected() {
        let a = Tape::new();
        let b = Tape::new();
        let x = b.param(Tensor::scalar(1.0));
        assert!(matches!(a.backward(x), Err(AdError::DetachedRoot)));
    }

    #[test]
    fn recording_is_topologically_ordered() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(vec![0.5, -1.0]));
        let w = tape.param(Tensor::column(vec![2.0, 3.0]));
        let _ = x.matmul(w).tanh().exp().sum();
        assert!(tape.is_topologically_ordered());
    }

    #[test]
    fn replay_is_bitwise_and_tracks_new_leaf_values() {
        let tape = Tape::new();
        let x = tape.param(Tensor::from_rows(&[[0.3, -0.7, 1.1], [2.0, 0.1, -0.4]]));
        let w = tape.constant(Tensor::from_rows(&[[0.2], [0.5], [-1.3]]));
        let y = x.matmul(w).silu().norm_rows().mean();
        let before = y.value();
        tape.replay();
        assert_eq!(y.value().data()[0].to_bits(), before.data()[0].to_bits());

        tape.set_leaf(x, &[1.0, 1.0, 1.0, -2.0, 0.0, 0.5]);
        tape.replay();
        let fresh = Tape::new();
        let x2 = fresh.param(Tensor::from_rows(&[[1.0, 1.0, 1.0], [-2.0, 0.0, 0.5]]));
        let w2 = fresh.constant(Tensor::from_rows(&[[0.2], [0.5], [-1.3]]));
        let y2 = x2.matmul(w2).silu().norm_rows().mean();
        assert_eq!(y.item().to_bits(), y2.item().to_bits());
    }

    #[test]
    fn mean_rows_is_row_order_independent() {
        let rows = [[0.1, 1e16], [0.2, 1.0], [0.3, -1e16]];
        let perm = [[0.3, -1e16], [0.1, 1e16], [0.2, 1.0]];
        let t1 = Tape::new();
        let a = t1.constant(Tensor::from_rows(&rows)).mean_rows().value();
        let t2 = Tape::new();
        let b = t2.constant(Tensor::from_rows(&perm)).mean_rows().value();
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_broadcast_gradient_reduces() {
        let tape = Tape::new();
        let s = tape.param(Tensor::scalar(2.0));
        let x = tape.constant(Tensor::row(vec![1.0, 2.0, 3.0]));
        let y = (x * s).sum();
        assert_eq!(tape.backward(y).unwrap().get(s).unwrap(), &[6.0]);
    }

    #[test]
    fn cross_product_value() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[[1.0, 0.0, 0.0]]));
        let b = tape.constant(Tensor::from_rows(&[[0.0, 1.0, 0.0]]));
        assert_eq!(a.cross(b).value().data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn fault_scales_the_targeted_rule_only() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(vec![0.3, -0.2]));
        let y = x.tanh().sum();
        let clean = tape.backward(y).unwrap().get_or_zeros(x);
        tape.set_gradient_fault(Some(GradientFault { kind: OpKind::Tanh, scale: 2.0 }));
        let bad = tape.backward(y).unwrap().get_or_zeros(x);
        assert_eq!(bad[0], 2.0 * clean[0]);
    }
}
