use std::borrow::Cow;

use super::kernels::{gemm_nn, gemm_nt, gemm_tn, sigmoid, softmax_row};
use super::{Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SumAxis {
    /// Reduce everything to shape `[1]`.
    All,
    /// Reduce the last axis, keeping it with extent 1.
    Last,
}

/// The closed primitive set. Shape rules:
///
/// * `MatMul`: `[m,k] x [k,n] -> [m,n]`; with `transpose_rhs`, `[m,k] x [n,k]^T -> [m,n]`.
/// * `Add`: equal shapes, or `[m,n] + [1,n]` (rhs row broadcast over rows).
/// * `Mul`: equal shapes.
/// * `Sigmoid`, `Tanh`, `Log`, `Scale`: elementwise, shape preserved.
/// * `Softmax`: over the last axis, shape preserved.
/// * `Concat`: all inputs agree except along `axis`.
/// * `Slice`: half-open `start..end` along `axis`.
/// * `Gather`: rows of a `[rows, cols]` table -> `[ids.len(), cols]`.
/// * `Sum`: see [`SumAxis`].
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive<T> {
    MatMul {
        transpose_rhs: bool,
    },
    Add,
    Mul,
    Sigmoid,
    Tanh,
    Softmax,
    Concat {
        axis: usize,
    },
    Slice {
        axis: usize,
        start: usize,
        end: usize,
    },
    Gather {
        ids: Vec<usize>,
    },
    Scale(T),
    Sum(SumAxis),
    Log,
}

impl<T> Primitive<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul { .. } => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Tanh => "tanh",
            Primitive::Softmax => "softmax",
            Primitive::Concat { .. } => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Gather { .. } => "gather",
            Primitive::Scale(_) => "scale",
            Primitive::Sum(_) => "sum",
            Primitive::Log => "log",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul { .. } | Primitive::Add | Primitive::Mul => Some(2),
            Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

struct Node<'p, T: Real> {
    value: Cow<'p, Tensor<T>>,
    prim: Option<Primitive<T>>,
    inputs: Vec<Var>,
    tracked: bool,
}

/// Ordered record of primitive applications. Every node's inputs precede it,
/// so the backward pass is a single reverse sweep.
///
/// Parameters can be borrowed for the lifetime `'p` instead of copied.
pub struct Tape<'p, T: Real> {
    nodes: Vec<Node<'p, T>>,
}

impl<'p, T: Real> Default for Tape<'p, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Cow<'p, Tensor<T>>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            prim: None,
            inputs: Vec::new(),
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Gradient-tracked leaf borrowing its storage.
    pub fn param(&mut self, t: &'p Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(t), true)
    }

    /// Gradient-tracked leaf owning its storage.
    pub fn variable(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(t), true)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(Cow::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'p Tensor<T>) -> Var {
        self.push_leaf(Cow::Borrowed(t), false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Applies one primitive, recording it for the backward pass.
    pub fn apply(&mut self, prim: Primitive<T>, inputs: &[Var]) -> Result<Var> {
        if let Some(n) = prim.arity() {
            if inputs.len() != n {
                return Err(TensorError::Invalid {
                    op: prim.name(),
                    reason: format!("expected {n} inputs, got {}", inputs.len()),
                });
            }
        } else if inputs.is_empty() {
            return Err(TensorError::Invalid {
                op: prim.name(),
                reason: "needs at least one input".into(),
            });
        }
        let values: Vec<&Tensor<T>> = inputs.iter().map(|v| self.value(*v)).collect();
        let out = forward(&prim, &values)?;
        if !out.is_finite() {
            return Err(TensorError::NonFinite { op: prim.name() });
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value: Cow::Owned(out),
            prim: Some(prim),
            inputs: inputs.to_vec(),
            tracked,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(
            Primitive::MatMul {
                transpose_rhs: false,
            },
            &[a, b],
        )
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(
            Primitive::MatMul {
                transpose_rhs: true,
            },
            &[a, b],
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Softmax, &[a])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        self.apply(Primitive::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.apply(Primitive::Slice { axis, start, end }, &[a])
    }

    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.apply(Primitive::Gather { ids: ids.to_vec() }, &[table])
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.apply(Primitive::Scale(s), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum(SumAxis::All), &[a])
    }

    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Sum(SumAxis::Last), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Primitive::Log, &[a])
    }

    /// `a - b`, composed from `scale` and `add`.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg = self.scale(b, -T::one())?;
        self.add(a, neg)
    }

    /// Reverse sweep from a single-element `loss`. Every tracked leaf gets
    /// an entry; leaves the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(TensorError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), T::one()));
        let mut leaves: Vec<(usize, Tensor<T>)> = Vec::new();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let Some(prim) = &node.prim else {
                leaves.push((idx, grad));
                continue;
            };
            let inputs: Vec<&Tensor<T>> = node.inputs.iter().map(|v| self.value(*v)).collect();
            let input_grads = backward_rule(prim, &inputs, &node.value, &grad);
            for (var, g) in node.inputs.iter().zip(input_grads) {
                if !self.nodes[var.0].tracked {
                    continue;
                }
                match &mut grads[var.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let mut by_node: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        for (idx, g) in leaves {
            by_node[idx] = Some(g);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.tracked && node.prim.is_none() && by_node[idx].is_none() {
                by_node[idx] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { by_node })
    }
}

/// Gradients of a loss with respect to the tracked leaves of a tape.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    by_node: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.by_node.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.by_node.get_mut(v.0).and_then(Option::take)
    }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    }
}

fn invalid(op: &'static str, reason: impl Into<String>) -> TensorError {
    TensorError::Invalid {
        op,
        reason: reason.into(),
    }
}

/// `(outer, extent, inner)` block decomposition around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn is_row_broadcast(lhs: &[usize], rhs: &[usize]) -> bool {
    lhs.len() == 2 && rhs.len() == 2 && rhs[0] == 1 && rhs[1] == lhs[1] && lhs[0] != 1
}

fn forward<T: Real>(prim: &Primitive<T>, xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let op = prim.name();
    match prim {
        Primitive::MatMul { transpose_rhs } => {
            let (a, b) = (xs[0], xs[1]);
            if a.rank() != 2 || b.rank() != 2 {
                return Err(mismatch(op, a.shape(), b.shape()));
            }
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let (n, kb) = if *transpose_rhs {
                (b.shape()[0], b.shape()[1])
            } else {
                (b.shape()[1], b.shape()[0])
            };
            if k != kb {
                return Err(mismatch(op, a.shape(), b.shape()));
            }
            let mut out = vec![T::zero(); m * n];
            if *transpose_rhs {
                gemm_nt(m, k, n, a.data(), b.data(), &mut out);
            } else {
                gemm_nn(m, k, n, a.data(), b.data(), &mut out);
            }
            Tensor::new(vec![m, n], out)
        }
        Primitive::Add => {
            let (a, b) = (xs[0], xs[1]);
            if a.shape() == b.shape() {
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(&x, &y)| x + y)
                    .collect();
                Tensor::new(a.shape().to_vec(), data)
            } else if is_row_broadcast(a.shape(), b.shape()) {
                let n = a.cols();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| x + b.data()[i % n])
                    .collect();
                Tensor::new(a.shape().to_vec(), data)
            } else {
                Err(mismatch(op, a.shape(), b.shape()))
            }
        }
        Primitive::Mul => {
            let (a, b) = (xs[0], xs[1]);
            if a.shape() != b.shape() {
                return Err(mismatch(op, a.shape(), b.shape()));
            }
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| x * y)
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        }
        Primitive::Sigmoid => Ok(xs[0].map(sigmoid)),
        Primitive::Tanh => Ok(xs[0].map(T::tanh)),
        Primitive::Log => {
            if xs[0].data().iter().any(|&v| v <= T::zero()) {
                return Err(TensorError::NonFinite { op });
            }
            Ok(xs[0].map(T::ln))
        }
        Primitive::Scale(s) => Ok(xs[0].map(|v| v * *s)),
        Primitive::Softmax => {
            let x = xs[0];
            let n = x.cols();
            let mut out = vec![T::zero(); x.len()];
            for (src, dst) in x.data().chunks(n).zip(out.chunks_mut(n)) {
                softmax_row(src, dst);
            }
            Tensor::new(x.shape().to_vec(), out)
        }
        Primitive::Concat { axis } => {
            let first = xs[0];
            let rank = first.rank();
            if *axis >= rank {
                return Err(invalid(
                    op,
                    format!("axis {axis} out of range for rank {rank}"),
                ));
            }
            let mut extent = 0;
            for x in xs {
                let compatible = x.rank() == rank
                    && x.shape()
                        .iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(d, (a, b))| d == *axis || a == b);
                if !compatible {
                    return Err(mismatch(op, first.shape(), x.shape()));
                }
                extent += x.shape()[*axis];
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = extent;
            let (outer, _, inner) = split_axis(&shape, *axis);
            let mut out = Vec::with_capacity(shape.iter().product());
            for o in 0..outer {
                for x in xs {
                    let block = x.shape()[*axis] * inner;
                    out.extend_from_slice(&x.data()[o * block..(o + 1) * block]);
                }
            }
            Tensor::new(shape, out)
        }
        Primitive::Slice { axis, start, end } => {
            let x = xs[0];
            if *axis >= x.rank() || start >= end || *end > x.shape()[*axis] {
                return Err(invalid(
                    op,
                    format!(
                        "range {start}..{end} on axis {axis} of shape {:?}",
                        x.shape()
                    ),
                ));
            }
            let (outer, extent, inner) = split_axis(x.shape(), *axis);
            let mut out = Vec::with_capacity(outer * (end - start) * inner);
            for o in 0..outer {
                let base = o * extent * inner;
                out.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
            }
            let mut shape = x.shape().to_vec();
            shape[*axis] = end - start;
            Tensor::new(shape, out)
        }
        Primitive::Gather { ids } => {
            let table = xs[0];
            if table.rank() != 2 {
                return Err(invalid(
                    op,
                    format!("table must be rank 2, got {:?}", table.shape()),
                ));
            }
            if ids.is_empty() {
                return Err(invalid(op, "no ids"));
            }
            let rows = table.shape()[0];
            let mut out = Vec::with_capacity(ids.len() * table.cols());
            for &id in ids {
                if id >= rows {
                    return Err(invalid(op, format!("id {id} out of range for {rows} rows")));
                }
                out.extend_from_slice(table.row_slice(id));
            }
            Tensor::new(vec![ids.len(), table.cols()], out)
        }
        Primitive::Sum(SumAxis::All) => Ok(Tensor::scalar(xs[0].data().iter().copied().sum())),
        Primitive::Sum(SumAxis::Last) => {
            let x = xs[0];
            let n = x.cols();
            let data = x
                .data()
                .chunks(n)
                .map(|c| c.iter().copied().sum())
                .collect();
            let mut shape = x.shape().to_vec();
            *shape.last_mut().unwrap() = 1;
            Tensor::new(shape, data)
        }
    }
}

fn backward_rule<T: Real>(
    prim: &Primitive<T>,
    xs: &[&Tensor<T>],
    y: &Tensor<T>,
    dy: &Tensor<T>,
) -> Vec<Tensor<T>> {
    match prim {
        Primitive::MatMul { transpose_rhs } => {
            let (a, b) = (xs[0], xs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = dy.shape()[1];
            let mut da = vec![T::zero(); m * k];
            let mut db = vec![T::zero(); b.len()];
            if *transpose_rhs {
                // y = a b^T, b: [n,k]
                gemm_nn(m, n, k, dy.data(), b.data(), &mut da);
                gemm_tn(n, m, k, dy.data(), a.data(), &mut db);
            } else {
                // y = a b, b: [k,n]
                gemm_nt(m, n, k, dy.data(), b.data(), &mut da);
                gemm_tn(k, m, n, a.data(), dy.data(), &mut db);
            }
            vec![
                Tensor::new(a.shape().to_vec(), da).unwrap(),
                Tensor::new(b.shape().to_vec(), db).unwrap(),
            ]
        }
        Primitive::Add => {
            let b = xs[1];
            let db = if b.shape() == dy.shape() {
                dy.clone()
            } else {
                let n = dy.cols();
                let mut acc = vec![T::zero(); n];
                for row in dy.data().chunks(n) {
                    for (a, &g) in acc.iter_mut().zip(row) {
                        *a = *a + g;
                    }
                }
                Tensor::new(b.shape().to_vec(), acc).unwrap()
            };
            vec![dy.clone(), db]
        }
        Primitive::Mul => {
            let (a, b) = (xs[0], xs[1]);
            let da = zip_map(dy, b, |g, v| g * v);
            let db = zip_map(dy, a, |g, v| g * v);
            vec![da, db]
        }
        Primitive::Sigmoid => vec![zip_map(dy, y, |g, s| g * s * (T::one() - s))],
        Primitive::Tanh => vec![zip_map(dy, y, |g, t| g * (T::one() - t * t))],
        Primitive::Log => vec![zip_map(dy, xs[0], |g, x| g / x)],
        Primitive::Scale(s) => vec![dy.map(|g| g * *s)],
        Primitive::Softmax => {
            let n = y.cols();
            let mut dx = vec![T::zero(); y.len()];
            for ((yr, gr), dr) in y
                .data()
                .chunks(n)
                .zip(dy.data().chunks(n))
                .zip(dx.chunks_mut(n))
            {
                let inner: T = yr.iter().zip(gr).map(|(&p, &g)| p * g).sum();
                for ((d, &p), &g) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = p * (g - inner);
                }
            }
            vec![Tensor::new(y.shape().to_vec(), dx).unwrap()]
        }
        Primitive::Concat { axis } => {
            let (outer, _, inner) = split_axis(dy.shape(), *axis);
            let total_block = dy.shape()[*axis] * inner;
            let mut offset = 0;
            xs.iter()
                .map(|x| {
                    let block = x.shape()[*axis] * inner;
                    let mut part = Vec::with_capacity(x.len());
                    for o in 0..outer {
                        let base = o * total_block + offset;
                        part.extend_from_slice(&dy.data()[base..base + block]);
                    }
                    offset += block;
                    Tensor::new(x.shape().to_vec(), part).unwrap()
                })
                .collect()
        }
        Primitive::Slice { axis, start, end } => {
            let x = xs[0];
            let (outer, extent, inner) = split_axis(x.shape(), *axis);
            let width = (end - start) * inner;
            let mut dx = Tensor::zeros(x.shape());
            for o in 0..outer {
                let dst = o * extent * inner + start * inner;
                dx.data_mut()[dst..dst + width]
                    .copy_from_slice(&dy.data()[o * width..(o + 1) * width]);
            }
            vec![dx]
        }
        Primitive::Gather { ids } => {
            let table = xs[0];
            let c = table.cols();
            let mut dt = Tensor::zeros(table.shape());
            for (r, &id) in ids.iter().enumerate() {
                let src = &dy.data()[r * c..(r + 1) * c];
                for (d, &g) in dt.data_mut()[id * c..(id + 1) * c].iter_mut().zip(src) {
                    *d = *d + g;
                }
            }
            vec![dt]
        }
        Primitive::Sum(SumAxis::All) => vec![Tensor::full(xs[0].shape(), dy.item())],
        Primitive::Sum(SumAxis::Last) => {
            let x = xs[0];
            let n = x.cols();
            let data = (0..x.len()).map(|i| dy.data()[i / n]).collect();
            vec![Tensor::new(x.shape().to_vec(), data).unwrap()]
        }
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).unwrap()
}
