//! Tape-based reverse-mode differentiation over rank-2 tensors.
//!
//! Ops are evaluated eagerly as they are recorded, so building the graph is
//! the forward pass. Every node caches its output for the backward sweep,
//! which visits nodes in reverse recording order exactly once.
//!
//! Elementwise binary ops broadcast operands whose row or column count is 1.

use std::rc::Rc;

use crate::error::{Error, Result};

use super::linalg;
use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Scale(Var, f64),
    Offset(Var),
    SumAll(Var),
    SumCols(Var),
    SumRows(Var),
    Concat(Vec<Var>),
    GatherCols(Var, Rc<[usize]>),
    GatherRows(Var, Rc<[usize]>),
    Reshape(Var),
    Transpose(Var),
    CumsumExclusive(Var),
    RowMatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    RowLogDet(Var, usize),
    LogSumExpCols(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Square(_) => "square",
            Op::Scale(..) => "scale",
            Op::Offset(_) => "offset",
            Op::SumAll(_) => "sum",
            Op::SumCols(_) => "sum_cols",
            Op::SumRows(_) => "sum_rows",
            Op::Concat(_) => "concat",
            Op::GatherCols(..) => "gather_cols",
            Op::GatherRows(..) => "gather_rows",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::CumsumExclusive(_) => "cumsum_exclusive",
            Op::RowMatMul { .. } => "row_matmul",
            Op::RowLogDet(..) => "row_logdet",
            Op::LogSumExpCols(_) => "logsumexp_cols",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A recorded computation. Single owner; not shared across threads.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    num_params: usize,
    error: Option<Error>,
}

fn same_shape(a: &Tensor, b: &Tensor) -> bool {
    a.rows() == b.rows() && a.cols() == b.cols()
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Option<Tensor> {
    if same_shape(a, b) {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        return Some(Tensor::from_parts(a.rows(), a.cols(), data));
    }
    let rows = broadcast_dim(a.rows(), b.rows())?;
    let cols = broadcast_dim(a.cols(), b.cols())?;
    let (ar, ac, br, bc) = (a.rows(), a.cols(), b.rows(), b.cols());
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ra = if ar == 1 { 0 } else { r };
        let rb = if br == 1 { 0 } else { r };
        for c in 0..cols {
            let ca = if ac == 1 { 0 } else { c };
            let cb = if bc == 1 { 0 } else { c };
            data.push(f(a.data()[ra * ac + ca], b.data()[rb * bc + cb]));
        }
    }
    Some(Tensor::from_parts(rows, cols, data))
}

/// Sum a broadcast gradient back down to `rows x cols`.
fn reduce_to(g: &Tensor, rows: usize, cols: usize) -> Tensor {
    if g.rows() == rows && g.cols() == cols {
        return g.clone();
    }
    let (gr, gc) = (g.rows(), g.cols());
    let mut out = vec![0.0; rows * cols];
    for r in 0..gr {
        let ro = if rows == 1 { 0 } else { r };
        for c in 0..gc {
            let co = if cols == 1 { 0 } else { c };
            out[ro * cols + co] += g.data()[r * gc + c];
        }
    }
    Tensor::from_parts(rows, cols, out)
}

/// Value of `g` at the position of each element of a broadcast operand.
fn expand_from(small: &Tensor, rows: usize, cols: usize) -> Tensor {
    if small.rows() == rows && small.cols() == cols {
        return small.clone();
    }
    let (sr, sc) = (small.rows(), small.cols());
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let ri = if sr == 1 { 0 } else { r };
        for c in 0..cols {
            let ci = if sc == 1 { 0 } else { c };
            out.push(small.data()[ri * sc + ci]);
        }
    }
    Tensor::from_parts(rows, cols, out)
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(x.rows(), x.cols(), x.data().iter().map(|v| f(*v)).collect())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.len(), b.len());
    Tensor::from_parts(
        a.rows(),
        a.cols(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect(),
    )
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

/// `ln sigmoid(x)`, stable for large |x|.
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

fn matmul(x: &Tensor, w: &Tensor) -> Tensor {
    let (rows, inner, cols) = (x.rows(), x.cols(), w.cols());
    let mut out = vec![0.0; rows * cols];
    let wd = w.data();
    for r in 0..rows {
        let xr = x.row_slice(r);
        let orow = &mut out[r * cols..(r + 1) * cols];
        for (i, &xv) in xr.iter().enumerate().take(inner) {
            if xv == 0.0 {
                continue;
            }
            let wrow = &wd[i * cols..(i + 1) * cols];
            for (o, wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    Tensor::from_parts(rows, cols, out)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// First failure recorded while building, if any.
    pub fn check(&self) -> Result<()> {
        match &self.error {
            None => Ok(()),
            Some(e) => Err(clone_error(e)),
        }
    }

    fn fail(&mut self, err: Error) {
        if self.error.is_none() {
            self.error = Some(err);
        }
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        let idx = self.nodes.len();
        if self.error.is_none() && !value.is_finite() {
            self.error = Some(Error::NonFinite {
                op: op.name(),
                node: idx,
            });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(idx)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input (never differentiated).
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input, false)
    }

    pub fn constant(&mut self, value: f64) -> Var {
        self.input(Tensor::scalar(value))
    }

    /// Leaf holding the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.num_params = self.num_params.max(store.len());
        let trainable = store.is_trainable(id);
        self.push(store.get(id).clone(), Op::Param(id), trainable)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let name = op.name();
        let out = broadcast_zip(self.value(a), self.value(b), f);
        let needs = self.ng(a) || self.ng(b);
        match out {
            Some(t) => self.push(t, op, needs),
            None => {
                let detail = format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape());
                self.fail(Error::shape(name, detail));
                let t = Tensor::zeros(self.value(a).rows(), self.value(a).cols());
                self.push(t, Op::Input, false)
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a / b` as `a * exp(-ln b)`; `b` must be positive.
    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let lb = self.log(b);
        let nl = self.scale(lb, -1.0);
        let inv = self.exp(nl);
        self.mul(a, inv)
    }

    /// `x @ w` for `x: [R, I]`, `w: [I, O]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.cols() != wv.rows() {
            let detail = format!("{:?} @ {:?}", xv.shape(), wv.shape());
            let rows = xv.rows();
            let cols = wv.cols();
            self.fail(Error::shape("matmul", detail));
            return self.push(Tensor::zeros(rows, cols), Op::Input, false);
        }
        let out = matmul(xv, wv);
        let needs = self.ng(x) || self.ng(w);
        self.push(out, Op::MatMul(x, w), needs)
    }

    /// Affine layer `x @ w + b` with `b: [1, O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = map(self.value(x), f);
        let needs = self.ng(x);
        self.push(out, op, needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Offset(x), |v| v + c)
    }

    /// `ln sigmoid(x) = -softplus(-x)`.
    pub fn log_sigmoid(&mut self, x: Var) -> Var {
        let n = self.neg(x);
        let sp = self.softplus(n);
        self.neg(sp)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.ng(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `[R, C] -> [R, 1]`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f64> = (0..xv.rows())
            .map(|r| xv.row_slice(r).iter().sum())
            .collect();
        let out = Tensor::from_parts(xv.rows(), 1, data);
        let needs = self.ng(x);
        self.push(out, Op::SumCols(x), needs)
    }

    /// Column sums: `[R, C] -> [1, C]`.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut data = vec![0.0; cols];
        for r in 0..xv.rows() {
            for (d, v) in data.iter_mut().zip(xv.row_slice(r)) {
                *d += v;
            }
        }
        let needs = self.ng(x);
        self.push(Tensor::from_parts(1, cols, data), Op::SumRows(x), needs)
    }

    /// Concatenate along columns; all parts share the row count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|p| self.value(*p).rows() != rows) {
            let shapes: Vec<_> = parts
                .iter()
                .map(|p| self.value(*p).shape().to_vec())
                .collect();
            self.fail(Error::shape("concat", format!("{shapes:?}")));
            return self.push(Tensor::zeros(rows, 1), Op::Input, false);
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row_slice(r));
            }
        }
        let needs = parts.iter().any(|p| self.ng(*p));
        self.push(
            Tensor::from_parts(rows, cols, data),
            Op::Concat(parts.to_vec()),
            needs,
        )
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Var {
        let idx: Rc<[usize]> = (start..end).collect();
        self.gather_cols(x, idx)
    }

    pub fn col(&mut self, x: Var, c: usize) -> Var {
        self.slice_cols(x, c, c + 1)
    }

    /// `out[r, j] = x[r, idx[j]]`.
    pub fn gather_cols(&mut self, x: Var, idx: Rc<[usize]>) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if idx.iter().any(|&c| c >= cols) {
            self.fail(Error::shape(
                "gather_cols",
                format!("index out of {cols} columns"),
            ));
            return self.push(Tensor::zeros(rows, idx.len()), Op::Input, false);
        }
        let mut data = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            let row = xv.row_slice(r);
            data.extend(idx.iter().map(|&c| row[c]));
        }
        let out = Tensor::from_parts(rows, idx.len(), data);
        let needs = self.ng(x);
        self.push(out, Op::GatherCols(x, idx), needs)
    }

    /// `out[i, :] = x[idx[i], :]`.
    pub fn gather_rows(&mut self, x: Var, idx: Rc<[usize]>) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        if idx.iter().any(|&r| r >= rows) {
            self.fail(Error::shape(
                "gather_rows",
                format!("index out of {rows} rows"),
            ));
            return self.push(Tensor::zeros(idx.len(), cols), Op::Input, false);
        }
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &r in idx.iter() {
            data.extend_from_slice(xv.row_slice(r));
        }
        let out = Tensor::from_parts(idx.len(), cols, data);
        let needs = self.ng(x);
        self.push(out, Op::GatherRows(x, idx), needs)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let xv = self.value(x);
        if xv.len() != rows * cols {
            let detail = format!("{:?} -> [{rows}, {cols}]", xv.shape());
            self.fail(Error::shape("reshape", detail));
            return self.push(Tensor::zeros(rows, cols), Op::Input, false);
        }
        let out = Tensor::from_parts(rows, cols, xv.data().to_vec());
        let needs = self.ng(x);
        self.push(out, Op::Reshape(x), needs)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let out = transpose(xv);
        let needs = self.ng(x);
        self.push(out, Op::Transpose(x), needs)
    }

    /// Exclusive prefix sum along each row: `out[r, j] = sum_{i<j} x[r, i]`.
    pub fn cumsum_exclusive(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let mut acc = 0.0;
            for &v in xv.row_slice(r) {
                data.push(acc);
                acc += v;
            }
        }
        let needs = self.ng(x);
        self.push(
            Tensor::from_parts(rows, cols, data),
            Op::CumsumExclusive(x),
            needs,
        )
    }

    /// Per-row small matrix product: each row of `a` holds an `m x k`
    /// matrix, each row of `b` a `k x n` matrix (row-major); the output row
    /// holds the `m x n` product. Either operand may have a single row,
    /// which is shared by all rows.
    pub fn row_matmul(&mut self, a: Var, b: Var, m: usize, k: usize, n: usize) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let rows = match broadcast_dim(av.rows(), bv.rows()) {
            Some(r) if av.cols() == m * k && bv.cols() == k * n => r,
            _ => {
                let detail = format!("{:?} x {:?} as {m}x{k} * {k}x{n}", av.shape(), bv.shape());
                let rows = av.rows().max(bv.rows());
                self.fail(Error::shape("row_matmul", detail));
                return self.push(Tensor::zeros(rows, m * n), Op::Input, false);
            }
        };
        let mut data = vec![0.0; rows * m * n];
        for r in 0..rows {
            let ar = av.row_slice(if av.rows() == 1 { 0 } else { r });
            let br = bv.row_slice(if bv.rows() == 1 { 0 } else { r });
            let or = &mut data[r * m * n..(r + 1) * m * n];
            for i in 0..m {
                for p in 0..k {
                    let x = ar[i * k + p];
                    for j in 0..n {
                        or[i * n + j] += x * br[p * n + j];
                    }
                }
            }
        }
        let needs = self.ng(a) || self.ng(b);
        self.push(
            Tensor::from_parts(rows, m * n, data),
            Op::RowMatMul { a, b, m, k, n },
            needs,
        )
    }

    /// Per-row `ln det` of an `m x m` matrix stored row-major in each row.
    /// A non-positive determinant is an invertibility violation.
    pub fn row_logdet(&mut self, x: Var, m: usize) -> Var {
        let xv = self.value(x);
        if xv.cols() != m * m {
            let detail = format!("{:?} is not a batch of {m}x{m} matrices", xv.shape());
            let rows = xv.rows();
            self.fail(Error::shape("row_logdet", detail));
            return self.push(Tensor::zeros(rows, 1), Op::Input, false);
        }
        let rows = xv.rows();
        let mut data = Vec::with_capacity(rows);
        let mut bad = None;
        for r in 0..rows {
            let det = linalg::det(xv.row_slice(r), m);
            if det <= 0.0 || !det.is_finite() {
                bad.get_or_insert((r, det));
                data.push(f64::NAN);
            } else {
                data.push(det.ln());
            }
        }
        let needs = self.ng(x);
        if let Some((r, det)) = bad {
            self.fail(Error::Invertibility(format!(
                "determinant {det:e} at row {r} of node {}",
                self.nodes.len()
            )));
        }
        self.push(
            Tensor::from_parts(rows, 1, data),
            Op::RowLogDet(x, m),
            needs,
        )
    }

    /// Stable `ln sum exp` of each row: `[R, C] -> [R, 1]`.
    pub fn logsumexp_cols(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f64> = (0..xv.rows()).map(|r| logsumexp(xv.row_slice(r))).collect();
        let out = Tensor::from_parts(xv.rows(), 1, data);
        let needs = self.ng(x);
        self.push(out, Op::LogSumExpCols(x), needs)
    }

    /// Reverse sweep from `output`, seeded with `seed` (same shape as the
    /// output). Returns gradients for trainable parameters only.
    pub fn backward(&self, output: Var, seed: &Tensor) -> Result<Gradients> {
        self.check()?;
        let out_val = self.value(output);
        if !same_shape(out_val, seed) {
            return Err(Error::shape(
                "backward",
                format!("seed {:?} vs output {:?}", seed.shape(), out_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed.clone());
        let mut result = Gradients::with_len(self.num_params);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let send = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Input => {}
                Op::Param(id) => result.accumulate(*id, &g),
                Op::Add(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        send(*a, reduce_to(&g, av.rows(), av.cols()), &mut grads);
                    }
                    if self.ng(*b) {
                        send(*b, reduce_to(&g, bv.rows(), bv.cols()), &mut grads);
                    }
                }
                Op::Sub(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    if self.ng(*a) {
                        send(*a, reduce_to(&g, av.rows(), av.cols()), &mut grads);
                    }
                    if self.ng(*b) {
                        let r = reduce_to(&g, bv.rows(), bv.cols());
                        send(*b, map(&r, |v| -v), &mut grads);
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (rows, cols) = (g.rows(), g.cols());
                    if self.ng(*a) {
                        let be = expand_from(bv, rows, cols);
                        let prod = zip_map(&g, &be, |x, y| x * y);
                        send(*a, reduce_to(&prod, av.rows(), av.cols()), &mut grads);
                    }
                    if self.ng(*b) {
                        let ae = expand_from(av, rows, cols);
                        let prod = zip_map(&g, &ae, |x, y| x * y);
                        send(*b, reduce_to(&prod, bv.rows(), bv.cols()), &mut grads);
                    }
                }
                Op::MatMul(x, w) => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    if self.ng(*x) {
                        send(*x, matmul_bt(&g, wv), &mut grads);
                    }
                    if self.ng(*w) {
                        send(*w, matmul_at(xv, &g), &mut grads);
                    }
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    send(*x, zip_map(&g, y, |g, y| g * (1.0 - y * y)), &mut grads);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    send(*x, zip_map(&g, y, |g, y| g * y * (1.0 - y)), &mut grads);
                }
                Op::Softplus(x) => {
                    let xv = self.value(*x);
                    send(*x, zip_map(&g, xv, |g, x| g * sigmoid(x)), &mut grads);
                }
                Op::Exp(x) => {
                    let y = &node.value;
                    send(*x, zip_map(&g, y, |g, y| g * y), &mut grads);
                }
                Op::Log(x) => {
                    let xv = self.value(*x);
                    send(*x, zip_map(&g, xv, |g, x| g / x), &mut grads);
                }
                Op::Square(x) => {
                    let xv = self.value(*x);
                    send(*x, zip_map(&g, xv, |g, x| 2.0 * g * x), &mut grads);
                }
                Op::Scale(x, c) => {
                    let c = *c;
                    send(*x, map(&g, |v| v * c), &mut grads);
                }
                Op::Offset(x) => send(*x, g, &mut grads),
                Op::SumAll(x) => {
                    let xv = self.value(*x);
                    send(
                        *x,
                        Tensor::filled(xv.rows(), xv.cols(), g.item()),
                        &mut grads,
                    );
                }
                Op::SumCols(x) => {
                    let xv = self.value(*x);
                    send(*x, expand_from(&g, xv.rows(), xv.cols()), &mut grads);
                }
                Op::SumRows(x) => {
                    let xv = self.value(*x);
                    send(*x, expand_from(&g, xv.rows(), xv.cols()), &mut grads);
                }
                Op::Concat(parts) => {
                    let rows = g.rows();
                    let mut start = 0;
                    for p in parts {
                        let pc = self.value(*p).cols();
                        if self.ng(*p) {
                            let mut data = Vec::with_capacity(rows * pc);
                            for r in 0..rows {
                                data.extend_from_slice(&g.row_slice(r)[start..start + pc]);
                            }
                            send(*p, Tensor::from_parts(rows, pc, data), &mut grads);
                        }
                        start += pc;
                    }
                }
                Op::GatherCols(x, idx) => {
                    let xv = self.value(*x);
                    let (rows, cols) = (xv.rows(), xv.cols());
                    let mut data = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let gr = g.row_slice(r);
                        for (j, &c) in idx.iter().enumerate() {
                            data[r * cols + c] += gr[j];
                        }
                    }
                    send(*x, Tensor::from_parts(rows, cols, data), &mut grads);
                }
                Op::GatherRows(x, idx) => {
                    let xv = self.value(*x);
                    let (rows, cols) = (xv.rows(), xv.cols());
                    let mut data = vec![0.0; rows * cols];
                    for (i, &r) in idx.iter().enumerate() {
                        let dst = &mut data[r * cols..(r + 1) * cols];
                        for (d, v) in dst.iter_mut().zip(g.row_slice(i)) {
                            *d += v;
                        }
                    }
                    send(*x, Tensor::from_parts(rows, cols, data), &mut grads);
                }
                Op::Reshape(x) => {
                    let xv = self.value(*x);
                    let t = Tensor::from_parts(xv.rows(), xv.cols(), g.into_data());
                    send(*x, t, &mut grads);
                }
                Op::Transpose(x) => send(*x, transpose(&g), &mut grads),
                Op::CumsumExclusive(x) => {
                    let (rows, cols) = (g.rows(), g.cols());
                    let mut data = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let gr = g.row_slice(r);
                        let mut acc = 0.0;
                        for c in (0..cols).rev() {
                            data[r * cols + c] = acc;
                            acc += gr[c];
                        }
                    }
                    send(*x, Tensor::from_parts(rows, cols, data), &mut grads);
                }
                Op::RowMatMul { a, b, m, k, n } => {
                    let (m, k, n) = (*m, *k, *n);
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let rows = g.rows();
                    let mut ga = vec![0.0; av.rows() * m * k];
                    let mut gb = vec![0.0; bv.rows() * k * n];
                    for r in 0..rows {
                        let ra = if av.rows() == 1 { 0 } else { r };
                        let rb = if bv.rows() == 1 { 0 } else { r };
                        let ar = av.row_slice(ra);
                        let br = bv.row_slice(rb);
                        let gr = g.row_slice(r);
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = 0.0;
                                for j in 0..n {
                                    let gij = gr[i * n + j];
                                    acc += gij * br[p * n + j];
                                    gb[rb * k * n + p * n + j] += ar[i * k + p] * gij;
                                }
                                ga[ra * m * k + i * k + p] += acc;
                            }
                        }
                    }
                    if self.ng(*a) {
                        send(*a, Tensor::from_parts(av.rows(), m * k, ga), &mut grads);
                    }
                    if self.ng(*b) {
                        send(*b, Tensor::from_parts(bv.rows(), k * n, gb), &mut grads);
                    }
                }
                Op::RowLogDet(x, m) => {
                    let m = *m;
                    let xv = self.value(*x);
                    let rows = xv.rows();
                    let mut data = Vec::with_capacity(rows * m * m);
                    for r in 0..rows {
                        let inv = linalg::inverse(xv.row_slice(r), m);
                        let gr = g.data()[r];
                        for i in 0..m {
                            for j in 0..m {
                                // d ln det X / dX_ij = (X^-1)_ji
                                data.push(gr * inv[j * m + i]);
                            }
                        }
                    }
                    send(*x, Tensor::from_parts(rows, m * m, data), &mut grads);
                }
                Op::LogSumExpCols(x) => {
                    let xv = self.value(*x);
                    let (rows, cols) = (xv.rows(), xv.cols());
                    let mut data = Vec::with_capacity(rows * cols);
                    for r in 0..rows {
                        let lse = node.value.data()[r];
                        let gr = g.data()[r];
                        data.extend(xv.row_slice(r).iter().map(|v| gr * (v - lse).exp()));
                    }
                    send(*x, Tensor::from_parts(rows, cols, data), &mut grads);
                }
            }
        }
        Ok(result)
    }
}

fn transpose(x: &Tensor) -> Tensor {
    let (rows, cols) = (x.rows(), x.cols());
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            data[c * rows + r] = x.data()[r * cols + c];
        }
    }
    Tensor::from_parts(cols, rows, data)
}

/// `g @ w^T`.
fn matmul_bt(g: &Tensor, w: &Tensor) -> Tensor {
    let (rows, inner) = (g.rows(), w.rows());
    let mut out = Vec::with_capacity(rows * inner);
    for r in 0..rows {
        let gr = g.row_slice(r);
        for i in 0..inner {
            out.push(gr.iter().zip(w.row_slice(i)).map(|(a, b)| a * b).sum());
        }
    }
    Tensor::from_parts(rows, inner, out)
}

/// `x^T @ g`.
fn matmul_at(x: &Tensor, g: &Tensor) -> Tensor {
    let (inner, cols) = (x.cols(), g.cols());
    let mut out = vec![0.0; inner * cols];
    for r in 0..x.rows() {
        let gr = g.row_slice(r);
        for (i, &xv) in x.row_slice(r).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let orow = &mut out[i * cols..(i + 1) * cols];
            for (o, gv) in orow.iter_mut().zip(gr) {
                *o += xv * gv;
            }
        }
    }
    Tensor::from_parts(inner, cols, out)
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn clone_error(e: &Error) -> Error {
    match e {
        Error::Shape { op, detail } => Error::Shape {
            op,
            detail: detail.clone(),
        },
        Error::NonFinite { op, node } => Error::NonFinite { op, node: *node },
        Error::Invertibility(s) => Error::Invertibility(s.clone()),
        other => Error::InvalidArgument(other.to_string()),
    }
}
