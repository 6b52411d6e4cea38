use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Result, TensorError};
use crate::kernels::{self, dot};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.idx
    }
}

/// The primitive set. Matrices are `[rows, cols]`; vectors passed where a
/// row is expected may be `[n]` or `[1, n]`.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[m,k] · [k,n]`
    MatMul,
    /// `[m,k] · [n,k]ᵀ`, the layout used for `W x` with `W: [out, in]`.
    MatMulNT,
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// `x[m,n] + b[n]` for every row.
    AddRow,
    /// `x[m,n] * c[m]` for every column.
    MulCol,
    /// Column-wise concatenation of any number of `[m, n_i]` inputs.
    ConcatCols,
    SliceCols { start: usize, len: usize },
    /// Row-wise concatenation of any number of `[m_i, n]` inputs.
    ConcatRows,
    SliceRows { start: usize, len: usize },
    /// Row `r` of the output is row `r` of the first input where `mask[r]`,
    /// otherwise of the second.
    SelectRows { mask: Vec<bool> },
    Tanh,
    Sigmoid,
    Elu { alpha: f64 },
    /// Row lookup `table[ids[i], :]`.
    Gather { ids: Vec<usize> },
    /// `Σ_i w_i · (−log softmax(logits_i)[t_i])`; rows with `w_i = 0` are masked.
    SoftmaxCrossEntropy { targets: Vec<usize>, weights: Vec<f64> },
    /// `Σ_i w_i x_i` over the flattened input.
    WeightedSum { weights: Vec<f64> },
    Sum,
    Mean,
    MaxRows,
    MinRows,
    MeanRows,
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::MatMulNT => "matmul_nt",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::AddRow => "add_row",
            Primitive::MulCol => "mul_col",
            Primitive::ConcatCols => "concat_cols",
            Primitive::SliceCols { .. } => "slice_cols",
            Primitive::ConcatRows => "concat_rows",
            Primitive::SliceRows { .. } => "slice_rows",
            Primitive::SelectRows { .. } => "select_rows",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Elu { .. } => "elu",
            Primitive::Gather { .. } => "gather",
            Primitive::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Primitive::WeightedSum { .. } => "weighted_sum",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::MaxRows => "max_rows",
            Primitive::MinRows => "min_rows",
            Primitive::MeanRows => "mean_rows",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul
            | Primitive::MatMulNT
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::AddRow
            | Primitive::MulCol
            | Primitive::SelectRows { .. } => Some(2),
            Primitive::ConcatCols | Primitive::ConcatRows => None,
            _ => Some(1),
        }
    }
}

enum Saved<T> {
    None,
    Values(Vec<T>),
    Indices(Vec<usize>),
}

struct Record<T> {
    prim: Primitive,
    inputs: Vec<Var>,
    saved: Saved<T>,
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    record: Option<Record<T>>,
}

/// Ordered record of primitive applications. Inputs always precede the
/// records that consume them, so a single reverse sweep is a valid
/// backward pass.
pub struct Tape<T> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Gradient buffers produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Grads<T> {
    tape: u64,
    shapes: Vec<Vec<usize>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.idx).and_then(|g| g.as_deref())
    }

    pub fn tensor(&self, v: Var) -> Option<Tensor<T>> {
        self.get(v).map(|g| Tensor::from_parts(self.shapes[v.idx].clone(), g.to_vec()))
    }
}

fn as_row(shape: &[usize]) -> Option<usize> {
    match shape {
        [n] => Some(*n),
        [1, n] => Some(*n),
        _ => None,
    }
}

fn as_col(shape: &[usize]) -> Option<usize> {
    match shape {
        [m] => Some(*m),
        [m, 1] => Some(*m),
        _ => None,
    }
}

fn matrix(op: &'static str, t: &Tensor<impl Scalar>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::shapes(op, &[s])),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of entries that carry a backward record.
    pub fn recorded(&self) -> usize {
        self.nodes.iter().filter(|n| n.record.is_some()).count()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(Node { value, requires_grad, record: None })
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, node: Node<T>) -> Var {
        self.nodes.push(node);
        Var { tape: self.id, idx: self.nodes.len() - 1 }
    }

    fn node(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id {
            return Err(TensorError::ForeignVar);
        }
        self.nodes.get(v.idx).ok_or(TensorError::ForeignVar)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).expect("var from another tape").value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).map(|n| n.requires_grad).unwrap_or(false)
    }

    /// Applies `prim` to `inputs` and records it when any input needs a gradient.
    pub fn apply(&mut self, prim: Primitive, inputs: &[Var]) -> Result<Var> {
        let op = prim.name();
        if let Some(n) = prim.arity() {
            if inputs.len() != n {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: format!("expected {n} inputs, got {}", inputs.len()),
                });
            }
        } else if inputs.is_empty() {
            return Err(TensorError::InvalidArgument { op, msg: "no inputs".into() });
        }
        let mut vals = Vec::with_capacity(inputs.len());
        let mut requires_grad = false;
        for &v in inputs {
            let n = self.node(v)?;
            requires_grad |= n.requires_grad;
            vals.push(&n.value);
        }
        let (value, saved) = forward(&prim, &vals)?;
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let record = requires_grad.then(|| Record { prim, inputs: inputs.to_vec(), saved });
        Ok(self.push(Node { value, requires_grad, record }))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMul, &[a, b])
    }
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::MatMulNT, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Primitive::Scale(c), &[a])
    }
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::AddRow, &[x, b])
    }
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        self.apply(Primitive::MulCol, &[x, c])
    }
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatCols, xs)
    }
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::SliceCols { start, len }, &[x])
    }
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        self.apply(Primitive::ConcatRows, xs)
    }
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(Primitive::SliceRows { start, len }, &[x])
    }
    pub fn select_rows(&mut self, mask: Vec<bool>, a: Var, b: Var) -> Result<Var> {
        self.apply(Primitive::SelectRows { mask }, &[a, b])
    }
    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Tanh, &[x])
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sigmoid, &[x])
    }
    pub fn elu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.apply(Primitive::Elu { alpha }, &[x])
    }
    pub fn gather(&mut self, table: Var, ids: Vec<usize>) -> Result<Var> {
        self.apply(Primitive::Gather { ids }, &[table])
    }
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Vec<usize>, weights: Vec<f64>) -> Result<Var> {
        self.apply(Primitive::SoftmaxCrossEntropy { targets, weights }, &[logits])
    }
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        self.apply(Primitive::WeightedSum { weights }, &[x])
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Sum, &[x])
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.apply(Primitive::Mean, &[x])
    }

    /// `a·x + b·y` for scalars or same-shape tensors, skipping zero weights.
    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Result<Option<Var>> {
        let mut acc: Option<Var> = None;
        for &(w, v) in terms {
            if w == 0.0 {
                continue;
            }
            let t = if w == 1.0 { v } else { self.scale(v, w)? };
            acc = Some(match acc {
                None => t,
                Some(a) => self.add(a, t)?,
            });
        }
        Ok(acc)
    }

    /// Reverse sweep from a scalar `loss`. Gradients accumulate across fan-out.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let root = self.node(loss)?;
        if !root.value.is_scalar() {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.idx] = Some(vec![T::one()]);
        for idx in (0..=loss.idx).rev() {
            let node = &self.nodes[idx];
            let Some(rec) = &node.record else { continue };
            let Some(dout) = grads[idx].take() else { continue };
            let need: Vec<bool> = rec.inputs.iter().map(|v| self.nodes[v.idx].requires_grad).collect();
            let ins: Vec<&Tensor<T>> = rec.inputs.iter().map(|v| &self.nodes[v.idx].value).collect();
            let contribs = backward_op(&rec.prim, &ins, &node.value, &rec.saved, &dout, &need);
            for (v, c) in rec.inputs.iter().zip(contribs) {
                let Some(c) = c else { continue };
                match &mut grads[v.idx] {
                    Some(g) => {
                        for (gi, ci) in g.iter_mut().zip(&c) {
                            *gi += *ci;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
            grads[idx] = Some(dout);
        }
        // Intermediate buffers were restored above; leaves keep theirs.
        Ok(Grads {
            tape: self.id,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
            grads,
        })
    }
}

fn forward<T: Scalar>(prim: &Primitive, x: &[&Tensor<T>]) -> Result<(Tensor<T>, Saved<T>)> {
    let op = prim.name();
    let plain = |t: Tensor<T>| Ok((t, Saved::None));
    match prim {
        Primitive::MatMul => {
            let (m, k) = matrix(op, x[0])?;
            let (k2, n) = matrix(op, x[1])?;
            if k != k2 {
                return Err(TensorError::shapes(op, &[x[0].shape(), x[1].shape()]));
            }
            let mut out = vec![T::zero(); m * n];
            kernels::gemm_nn(x[0].data(), x[1].data(), &mut out, m, k, n);
            plain(Tensor::from_parts(vec![m, n], out))
        }
        Primitive::MatMulNT => {
            let (m, k) = matrix(op, x[0])?;
            let (n, k2) = matrix(op, x[1])?;
            if k != k2 {
                return Err(TensorError::shapes(op, &[x[0].shape(), x[1].shape()]));
            }
            let mut out = vec![T::zero(); m * n];
            kernels::gemm_nt(x[0].data(), x[1].data(), &mut out, m, k, n);
            plain(Tensor::from_parts(vec![m, n], out))
        }
        Primitive::Add | Primitive::Sub | Primitive::Mul => {
            if x[0].shape() != x[1].shape() {
                return Err(TensorError::shapes(op, &[x[0].shape(), x[1].shape()]));
            }
            let (a, b) = (x[0].data(), x[1].data());
            let data: Vec<T> = match prim {
                Primitive::Add => a.iter().zip(b).map(|(p, q)| *p + *q).collect(),
                Primitive::Sub => a.iter().zip(b).map(|(p, q)| *p - *q).collect(),
                _ => a.iter().zip(b).map(|(p, q)| *p * *q).collect(),
            };
            plain(Tensor::from_parts(x[0].shape().to_vec(), data))
        }
        Primitive::Scale(c) => {
            let c = T::of(*c);
            plain(x[0].map(|v| v * c))
        }
        Primitive::AddRow => {
            let (m, n) = matrix(op, x[0])?;
            if as_row(x[1].shape()) != Some(n) {
                return Err(TensorError::shapes(op, &[x[0].shape(), x[1].shape()]));
            }
            let b = x[1].data();
            let mut out = x[0].data().to_vec();
            for r in 0..m {
                for (o, bv) in out[r * n..(r + 1) * n].iter_mut().zip(b) {
                    *o += *bv;
                }
            }
            plain(Tensor::from_parts(vec![m, n], out))
        }
        Primitive::MulCol => {
            let (m, n) = matrix(op, x[0])?;
            if as_col(x[1].shape()) != Some(m) {
                return Err(TensorError::shapes(op, &[x[0].shape(), x[1].shape()]));
            }
            let c = x[1].data();
            let mut out = x[0].data().to_vec();
            for r in 0..m {
                for o in &mut out[r * n..(r + 1) * n] {
                    *o *= c[r];
                }
            }
            plain(Tensor::from_parts(vec![m, n], out))
        }
        Primitive::ConcatCols => {
            let mut rows = None;
            let mut total = 0;
            for t in x {
                let (m, n) = matrix(op, t)?;
                if *rows.get_or_insert(m) != m {
                    let shapes: Vec<&[usize]> = x.iter().map(|t| t.shape()).collect();
                    return Err(TensorError::shapes(op, &shapes));
                }
                total += n;
            }
            let m = rows.unwrap_or(0);
            let mut out = Vec::with_capacity(m * total);
            for r in 0..m {
                for t in x {
                    out.extend_from_slice(t.row(r));
                }
            }
            plain(Tensor::from_parts(vec![m, total], out))
        }
        Primitive::SliceCols { start, len } => {
            let (m, n) = matrix(op, x[0])?;
            if start + len > n || *len == 0 {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: format!("columns {start}..{} out of 0..{n}", start + len),
                });
            }
            let mut out = Vec::with_capacity(m * len);
            for r in 0..m {
                out.extend_from_slice(&x[0].row(r)[*start..start + len]);
            }
            plain(Tensor::from_parts(vec![m, *len], out))
        }
        Primitive::ConcatRows => {
            let mut cols = None;
            let mut total = 0;
            for t in x {
                let (m, n) = matrix(op, t)?;
                if *cols.get_or_insert(n) != n {
                    let shapes: Vec<&[usize]> = x.iter().map(|t| t.shape()).collect();
                    return Err(TensorError::shapes(op, &shapes));
                }
                total += m;
            }
            let n = cols.unwrap_or(0);
            let mut out = Vec::with_capacity(total * n);
            for t in x {
                out.extend_from_slice(t.data());
            }
            plain(Tensor::from_parts(vec![total, n], out))
        }
        Primitive::SliceRows { start, len } => {
            let (m, n) = matrix(op, x[0])?;
            if start + len > m || *len == 0 {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: format!("rows {start}..{} out of 0..{m}", start + len),
                });
            }
            plain(Tensor::from_parts(vec![*len, n], x[0].data()[start * n..(start + len) * n].to_vec()))
        }
        Primitive::SelectRows { mask } => {
            let (m, n) = matrix(op, x[0])?;
            if x[0].shape() != x[1].shape() || mask.len() != m {
                return Err(TensorError::shapes(op, &[x[0].shape(), x[1].shape(), &[mask.len()]]));
            }
            let mut out = Vec::with_capacity(m * n);
            for (r, &first) in mask.iter().enumerate() {
                out.extend_from_slice(if first { x[0].row(r) } else { x[1].row(r) });
            }
            plain(Tensor::from_parts(vec![m, n], out))
        }
        Primitive::Tanh => plain(x[0].map(|v| v.tanh())),
        Primitive::Sigmoid => plain(x[0].map(kernels::sigmoid)),
        Primitive::Elu { alpha } => {
            let a = T::of(*alpha);
            plain(x[0].map(|v| kernels::elu(v, a)))
        }
        Primitive::Gather { ids } => {
            let (v, e) = matrix(op, x[0])?;
            let mut out = Vec::with_capacity(ids.len() * e);
            for &id in ids {
                if id >= v {
                    return Err(TensorError::InvalidArgument { op, msg: format!("id {id} out of range 0..{v}") });
                }
                out.extend_from_slice(x[0].row(id));
            }
            plain(Tensor::from_parts(vec![ids.len(), e], out))
        }
        Primitive::SoftmaxCrossEntropy { targets, weights } => {
            let (m, v) = matrix(op, x[0])?;
            if targets.len() != m || weights.len() != m {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: format!("{m} rows but {} targets / {} weights", targets.len(), weights.len()),
                });
            }
            let mut probs = vec![T::zero(); m * v];
            let mut loss = T::zero();
            for r in 0..m {
                let t = targets[r];
                if t >= v {
                    return Err(TensorError::InvalidArgument { op, msg: format!("target {t} out of range 0..{v}") });
                }
                let row = x[0].row(r);
                let lse = kernels::log_softmax_row(row, &mut probs[r * v..(r + 1) * v]);
                if weights[r] != 0.0 {
                    loss += T::of(weights[r]) * (lse - row[t]);
                }
            }
            Ok((Tensor::scalar(loss), Saved::Values(probs)))
        }
        Primitive::WeightedSum { weights } => {
            if weights.len() != x[0].numel() {
                return Err(TensorError::InvalidArgument {
                    op,
                    msg: format!("{} weights for {} values", weights.len(), x[0].numel()),
                });
            }
            let s = x[0].data().iter().zip(weights).map(|(v, w)| *v * T::of(*w)).sum();
            plain(Tensor::scalar(s))
        }
        Primitive::Sum => plain(Tensor::scalar(x[0].data().iter().copied().sum())),
        Primitive::Mean => {
            if x[0].numel() == 0 {
                return Err(TensorError::InvalidArgument { op, msg: "empty input".into() });
            }
            let s: T = x[0].data().iter().copied().sum();
            plain(Tensor::scalar(s / T::of(x[0].numel() as f64)))
        }
        Primitive::MaxRows | Primitive::MinRows => {
            let (m, n) = matrix(op, x[0])?;
            if m == 0 {
                return Err(TensorError::InvalidArgument { op, msg: "no rows".into() });
            }
            let is_max = matches!(prim, Primitive::MaxRows);
            let mut best = x[0].row(0).to_vec();
            let mut arg = vec![0usize; n];
            for r in 1..m {
                for (c, &v) in x[0].row(r).iter().enumerate() {
                    if (is_max && v > best[c]) || (!is_max && v < best[c]) {
                        best[c] = v;
                        arg[c] = r;
                    }
                }
            }
            Ok((Tensor::from_parts(vec![1, n], best), Saved::Indices(arg)))
        }
        Primitive::MeanRows => {
            let (m, n) = matrix(op, x[0])?;
            if m == 0 {
                return Err(TensorError::InvalidArgument { op, msg: "no rows".into() });
            }
            let mut out = vec![T::zero(); n];
            for r in 0..m {
                for (o, v) in out.iter_mut().zip(x[0].row(r)) {
                    *o += *v;
                }
            }
            let inv = T::one() / T::of(m as f64);
            out.iter_mut().for_each(|o| *o *= inv);
            plain(Tensor::from_parts(vec![1, n], out))
        }
    }
}

fn backward_op<T: Scalar>(
    prim: &Primitive,
    x: &[&Tensor<T>],
    out: &Tensor<T>,
    saved: &Saved<T>,
    dout: &[T],
    need: &[bool],
) -> Vec<Option<Vec<T>>> {
    let unary = |g: Vec<T>| vec![Some(g)];
    match prim {
        Primitive::MatMul => {
            let (m, k) = x[0].dims2();
            let n = x[1].dims2().1;
            let da = need[0].then(|| {
                let mut g = vec![T::zero(); m * k];
                kernels::gemm_nt(dout, x[1].data(), &mut g, m, n, k);
                g
            });
            let db = need[1].then(|| {
                let mut g = vec![T::zero(); k * n];
                kernels::gemm_tn(x[0].data(), dout, &mut g, m, k, n);
                g
            });
            vec![da, db]
        }
        Primitive::MatMulNT => {
            let (m, k) = x[0].dims2();
            let n = x[1].dims2().0;
            let da = need[0].then(|| {
                let mut g = vec![T::zero(); m * k];
                kernels::gemm_nn(dout, x[1].data(), &mut g, m, n, k);
                g
            });
            let db = need[1].then(|| {
                let mut g = vec![T::zero(); n * k];
                kernels::gemm_tn(dout, x[0].data(), &mut g, m, n, k);
                g
            });
            vec![da, db]
        }
        Primitive::Add => vec![need[0].then(|| dout.to_vec()), need[1].then(|| dout.to_vec())],
        Primitive::Sub => vec![need[0].then(|| dout.to_vec()), need[1].then(|| dout.iter().map(|g| -*g).collect())],
        Primitive::Mul => vec![
            need[0].then(|| dout.iter().zip(x[1].data()).map(|(g, b)| *g * *b).collect()),
            need[1].then(|| dout.iter().zip(x[0].data()).map(|(g, a)| *g * *a).collect()),
        ],
        Primitive::Scale(c) => {
            let c = T::of(*c);
            unary(dout.iter().map(|g| *g * c).collect())
        }
        Primitive::AddRow => {
            let (m, n) = x[0].dims2();
            let db = need[1].then(|| {
                let mut g = vec![T::zero(); n];
                for r in 0..m {
                    for (gi, d) in g.iter_mut().zip(&dout[r * n..(r + 1) * n]) {
                        *gi += *d;
                    }
                }
                g
            });
            vec![need[0].then(|| dout.to_vec()), db]
        }
        Primitive::MulCol => {
            let (m, n) = x[0].dims2();
            let c = x[1].data();
            let dx = need[0].then(|| {
                let mut g = dout.to_vec();
                for r in 0..m {
                    g[r * n..(r + 1) * n].iter_mut().for_each(|v| *v *= c[r]);
                }
                g
            });
            let dc = need[1].then(|| (0..m).map(|r| dot(&dout[r * n..(r + 1) * n], x[0].row(r))).collect());
            vec![dx, dc]
        }
        Primitive::ConcatCols => {
            let m = out.dims2().0;
            let total = out.dims2().1;
            let mut offset = 0;
            let mut res = Vec::with_capacity(x.len());
            for (i, t) in x.iter().enumerate() {
                let n = t.dims2().1;
                res.push(need[i].then(|| {
                    let mut g = Vec::with_capacity(m * n);
                    for r in 0..m {
                        g.extend_from_slice(&dout[r * total + offset..r * total + offset + n]);
                    }
                    g
                }));
                offset += n;
            }
            res
        }
        Primitive::SliceCols { start, len } => {
            let (m, n) = x[0].dims2();
            let mut g = vec![T::zero(); m * n];
            for r in 0..m {
                g[r * n + start..r * n + start + len].copy_from_slice(&dout[r * len..(r + 1) * len]);
            }
            unary(g)
        }
        Primitive::ConcatRows => {
            let mut offset = 0;
            let mut res = Vec::with_capacity(x.len());
            for (i, t) in x.iter().enumerate() {
                let len = t.numel();
                res.push(need[i].then(|| dout[offset..offset + len].to_vec()));
                offset += len;
            }
            res
        }
        Primitive::SliceRows { start, len } => {
            let (m, n) = x[0].dims2();
            let mut g = vec![T::zero(); m * n];
            g[start * n..(start + len) * n].copy_from_slice(dout);
            unary(g)
        }
        Primitive::SelectRows { mask } => {
            let n = x[0].dims2().1;
            let route = |want: bool| {
                let mut g = dout.to_vec();
                for (r, &first) in mask.iter().enumerate() {
                    if first != want {
                        g[r * n..(r + 1) * n].iter_mut().for_each(|v| *v = T::zero());
                    }
                }
                g
            };
            vec![need[0].then(|| route(true)), need[1].then(|| route(false))]
        }
        Primitive::Tanh => unary(dout.iter().zip(out.data()).map(|(g, y)| *g * (T::one() - *y * *y)).collect()),
        Primitive::Sigmoid => unary(dout.iter().zip(out.data()).map(|(g, y)| *g * *y * (T::one() - *y)).collect()),
        Primitive::Elu { alpha } => {
            let a = T::of(*alpha);
            unary(
                dout.iter()
                    .zip(x[0].data().iter().zip(out.data()))
                    .map(|(g, (xv, y))| if *xv > T::zero() { *g } else { *g * (*y + a) })
                    .collect(),
            )
        }
        Primitive::Gather { ids } => {
            let (v, e) = x[0].dims2();
            let mut g = vec![T::zero(); v * e];
            for (r, &id) in ids.iter().enumerate() {
                for (gi, d) in g[id * e..(id + 1) * e].iter_mut().zip(&dout[r * e..(r + 1) * e]) {
                    *gi += *d;
                }
            }
            unary(g)
        }
        Primitive::SoftmaxCrossEntropy { targets, weights } => {
            let Saved::Values(probs) = saved else { unreachable!("softmax saves probabilities") };
            let (m, v) = x[0].dims2();
            let d = dout[0];
            let mut g = vec![T::zero(); m * v];
            for r in 0..m {
                if weights[r] == 0.0 {
                    continue;
                }
                let w = T::of(weights[r]) * d;
                let row = &mut g[r * v..(r + 1) * v];
                for (gi, p) in row.iter_mut().zip(&probs[r * v..(r + 1) * v]) {
                    *gi = w * *p;
                }
                row[targets[r]] -= w;
            }
            unary(g)
        }
        Primitive::WeightedSum { weights } => unary(weights.iter().map(|w| T::of(*w) * dout[0]).collect()),
        Primitive::Sum => unary(vec![dout[0]; x[0].numel()]),
        Primitive::Mean => {
            let n = x[0].numel();
            unary(vec![dout[0] / T::of(n as f64); n])
        }
        Primitive::MaxRows | Primitive::MinRows => {
            let Saved::Indices(arg) = saved else { unreachable!("extrema save indices") };
            let (m, n) = x[0].dims2();
            let mut g = vec![T::zero(); m * n];
            for (c, &r) in arg.iter().enumerate() {
                g[r * n + c] = dout[c];
            }
            unary(g)
        }
        Primitive::MeanRows => {
            let (m, n) = x[0].dims2();
            let inv = T::one() / T::of(m as f64);
            let mut g = Vec::with_capacity(m * n);
            for _ in 0..m {
                g.extend(dout.iter().map(|d| *d * inv));
            }
            unary(g)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn tanh_of_zero_is_zero_with_unit_slope() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(&[1, 3]), true);
        let y = tape.tanh(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 0.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn identity_matmul_is_noop() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(3));
        let a = tape.constant(t(&[3, 2], &[1.0, -2.0, 3.5, 0.0, 7.0, 1e-3]));
        let y = tape.matmul(i, a).unwrap();
        assert_eq!(tape.value(y), tape.value(a));
    }

    #[test]
    fn elu_at_minus_one() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::<f64>::scalar(-1.0));
        let y = tape.elu(x, 1.0).unwrap();
        assert!((tape.value(y).item() - (-0.632_120_558_828_557_7)).abs() < 1e-12);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::scalar(3.0), true);
        let y = tape.add(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[2.0]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(err, TensorError::ShapeMismatch { op: "matmul", shapes: vec![vec![2, 3], vec![2, 3]] });
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::scalar(1e308));
        assert_eq!(tape.scale(a, 10.0).unwrap_err(), TensorError::NonFinite { op: "scale" });
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_loss() {
        let mut tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(matches!(tape.backward(a), Err(TensorError::NonScalarLoss(_))));
        let mut other = Tape::<f64>::new();
        let b = other.leaf(Tensor::scalar(1.0), true);
        assert_eq!(tape.backward(b).unwrap_err(), TensorError::ForeignVar);
    }

    #[test]
    fn constants_are_not_recorded() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 2]));
        let b = tape.tanh(a).unwrap();
        let _ = tape.sum(b).unwrap();
        assert_eq!(tape.recorded(), 0);
        let w = tape.leaf(Tensor::zeros(&[2, 2]), true);
        let _ = tape.add(a, w).unwrap();
        assert_eq!(tape.recorded(), 1);
    }

    #[test]
    fn masked_cross_entropy_ignores_zero_weight_rows() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[2, 4]), true);
        let l = tape.softmax_cross_entropy(logits, vec![1, 3], vec![1.0, 0.0]).unwrap();
        assert!((tape.value(l).item() - 4f64.ln()).abs() < 1e-12);
        let g = tape.backward(l).unwrap();
        assert!(g.get(logits).unwrap()[4..].iter().all(|v| *v == 0.0));
    }
}
