//! Dense row-major matrices and a reverse-mode tape.
//!
//! Every primitive records its inputs on the tape; [`Tape::backward`] walks
//! the records in reverse and accumulates gradients for every node. Leaves
//! may borrow their values so parameters are not copied per tape.

use std::borrow::Cow;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{0}: non-finite value")]
    NonFinite(&'static str),
    #[error("loss must be 1x1, got {0}x{1}")]
    NotScalarLoss(usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2 {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::ShapeMismatch {
                op: "new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::row_vector(vec![v])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, b: &Tensor2) -> Tensor2 {
        debug_assert_eq!(self.cols, b.rows);
        let mut out = Tensor2::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &b.data[k * b.cols..(k + 1) * b.cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// `selfᵀ · b` without materialising the transpose.
    fn t_matmul(&self, b: &Tensor2) -> Tensor2 {
        debug_assert_eq!(self.rows, b.rows);
        let mut out = Tensor2::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let arow = &self.data[k * self.cols..(k + 1) * self.cols];
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            for (i, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// `self · bᵀ` without materialising the transpose.
    fn matmul_t(&self, b: &Tensor2) -> Tensor2 {
        debug_assert_eq!(self.cols, b.cols);
        let mut out = Tensor2::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let arow = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..b.rows {
                let brow = &b.data[j * b.cols..(j + 1) * b.cols];
                out.data[i * b.rows + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, o: &Tensor2, f: impl Fn(f64, f64) -> f64) -> Tensor2 {
        Tensor2 {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    fn add_assign(&mut self, o: &Tensor2) {
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }

    fn column_sums(&self) -> Tensor2 {
        let mut out = Tensor2::zeros(1, self.cols);
        for r in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else 1/(1-p).
pub fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Tensor2 {
    let keep = 1.0 / (1.0 - p);
    Tensor2 {
        rows,
        cols,
        data: (0..rows * cols)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect(),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    SoftmaxRows(Var),
    LayerNormRows(Var),
    Elu(Var),
    Sigmoid(Var),
    Glu(Var),
    Dropout(Var, Tensor2),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    BceWithLogits(Var, f64),
}

struct Node<'p> {
    value: Cow<'p, Tensor2>,
    op: Op,
}

/// Recorded computation. `'p` is the lifetime of borrowed leaf values.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

fn mismatch(op: &'static str, a: &Tensor2, b: &Tensor2) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor2, op: Op) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(op_name));
        }
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, t: Tensor2) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(t),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that borrows its value, typically a model parameter.
    pub fn param(&mut self, t: &'p Tensor2) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(t),
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn val(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.val(a), self.val(b));
        if x.cols != y.rows {
            return Err(mismatch("matmul", x, y));
        }
        let out = x.matmul(y);
        self.push("matmul", out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.val(a), self.val(b));
        if x.shape() != y.shape() {
            return Err(mismatch("add", x, y));
        }
        let out = x.zip(y, |p, q| p + q);
        self.push("add", out, Op::Add(a, b))
    }

    /// Adds a 1×c row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (x, b) = (self.val(a), self.val(row));
        if b.rows != 1 || b.cols != x.cols {
            return Err(mismatch("add_row", x, b));
        }
        let mut out = x.clone();
        for r in 0..out.rows {
            for (o, v) in out.data[r * x.cols..(r + 1) * x.cols].iter_mut().zip(&b.data) {
                *o += v;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (x, y) = (self.val(a), self.val(b));
        if x.shape() != y.shape() {
            return Err(mismatch("mul", x, y));
        }
        let out = x.zip(y, |p, q| p * q);
        self.push("mul", out, Op::Mul(a, b))
    }

    /// Multiplies every row of `a` elementwise by a 1×c row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (x, g) = (self.val(a), self.val(row));
        if g.rows != 1 || g.cols != x.cols {
            return Err(mismatch("mul_row", x, g));
        }
        let mut out = x.clone();
        for r in 0..out.rows {
            for (o, v) in out.data[r * x.cols..(r + 1) * x.cols].iter_mut().zip(&g.data) {
                *o *= v;
            }
        }
        self.push("mul_row", out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var, TensorError> {
        let out = self.val(a).map(|v| v * k);
        self.push("scale", out, Op::Scale(a, k))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.val(a);
        let mut out = x.clone();
        for r in 0..x.rows {
            let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push("softmax", out, Op::SoftmaxRows(a))
    }

    /// Row-wise standardisation without affine parameters.
    pub fn layer_norm_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.val(a);
        let mut out = x.clone();
        for r in 0..x.rows {
            let row = &mut out.data[r * x.cols..(r + 1) * x.cols];
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * inv;
            }
        }
        self.push("layer_norm", out, Op::LayerNormRows(a))
    }

    pub fn elu(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.val(a).map(elu);
        self.push("elu", out, Op::Elu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.val(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    /// Splits the columns into halves `[a | b]` and returns `a ⊙ σ(b)`.
    pub fn glu(&mut self, a: Var) -> Result<Var, TensorError> {
        let x = self.val(a);
        if !x.cols.is_multiple_of(2) {
            return Err(mismatch("glu", x, x));
        }
        let h = x.cols / 2;
        let mut out = Tensor2::zeros(x.rows, h);
        for r in 0..x.rows {
            let row = x.row(r);
            for c in 0..h {
                out.data[r * h + c] = row[c] * sigmoid(row[h + c]);
            }
        }
        self.push("glu", out, Op::Glu(a))
    }

    /// Multiplies by a precomputed (already rescaled) mask.
    pub fn dropout(&mut self, a: Var, mask: Tensor2) -> Result<Var, TensorError> {
        let x = self.val(a);
        if x.shape() != mask.shape() {
            return Err(mismatch("dropout", x, &mask));
        }
        let out = x.zip(&mask, |p, q| p * q);
        self.push("dropout", out, Op::Dropout(a, mask))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.val(parts[0]);
        let cols = first.cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.val(p);
            if t.cols != cols {
                return Err(mismatch("concat_rows", first, t));
            }
            data.extend_from_slice(&t.data);
            rows += t.rows;
        }
        self.push("concat_rows", Tensor2 { rows, cols, data }, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = self.val(parts[0]);
        let rows = first.rows;
        let mut cols = 0;
        for &p in parts {
            let t = self.val(p);
            if t.rows != rows {
                return Err(mismatch("concat_cols", first, t));
            }
            cols += t.cols;
        }
        let mut out = Tensor2::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let t = self.val(p);
            for r in 0..rows {
                out.data[r * cols + offset..r * cols + offset + t.cols].copy_from_slice(t.row(r));
            }
            offset += t.cols;
        }
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()))
    }

    /// Rows `start..start + len`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let x = self.val(a);
        if start + len > x.rows {
            return Err(mismatch("slice_rows", x, &Tensor2::zeros(start + len, x.cols)));
        }
        let out = Tensor2 {
            rows: len,
            cols: x.cols,
            data: x.data[start * x.cols..(start + len) * x.cols].to_vec(),
        };
        self.push("slice_rows", out, Op::SliceRows(a, start))
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let x = self.val(a);
        if start + len > x.cols {
            return Err(mismatch("slice_cols", x, &Tensor2::zeros(x.rows, start + len)));
        }
        let mut out = Tensor2::zeros(x.rows, len);
        for r in 0..x.rows {
            out.data[r * len..(r + 1) * len].copy_from_slice(&x.row(r)[start..start + len]);
        }
        self.push("slice_cols", out, Op::SliceCols(a, start))
    }

    /// Splits columns at `at` into a left and right part.
    pub fn split_cols(&mut self, a: Var, at: usize) -> Result<(Var, Var), TensorError> {
        let cols = self.val(a).cols;
        Ok((self.slice_cols(a, 0, at)?, self.slice_cols(a, at, cols.saturating_sub(at))?))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let out = self.val(a).transpose();
        self.push("transpose", out, Op::Transpose(a))
    }

    /// Reinterprets the row-major data with a new shape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        let x = self.val(a);
        if rows * cols != x.data.len() {
            return Err(mismatch("reshape", x, &Tensor2::zeros(rows, cols)));
        }
        let out = Tensor2 {
            rows,
            cols,
            data: x.data.clone(),
        };
        self.push("reshape", out, Op::Reshape(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let s = self.val(a).data.iter().sum();
        self.push("sum", Tensor2::scalar(s), Op::Sum(a))
    }

    /// Binary cross-entropy of a 1×1 logit against a 0/1 target, computed in
    /// the overflow-free form `max(z,0) - z·y + ln(1 + e^-|z|)`.
    pub fn bce_with_logits(&mut self, logit: Var, target: f64) -> Result<Var, TensorError> {
        let x = self.val(logit);
        if x.shape() != (1, 1) {
            return Err(TensorError::NotScalarLoss(x.rows, x.cols));
        }
        let z = x.data[0];
        let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        self.push("bce", Tensor2::scalar(loss), Op::BceWithLogits(logit, target))
    }

    /// Gradients of a 1×1 node with respect to every node on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let l = self.val(loss);
        if l.shape() != (1, 1) {
            return Err(TensorError::NotScalarLoss(l.rows, l.cols));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor2::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            let y = &*node.value;
            let mut acc = |v: Var, d: Tensor2| match &mut grads[v.0] {
                Some(e) => e.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (x, w) = (self.val(*a), self.val(*b));
                    acc(*a, g.matmul_t(w));
                    acc(*b, x.t_matmul(&g));
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone());
                    acc(*b, g.clone());
                }
                Op::AddRow(a, row) => {
                    acc(*row, g.column_sums());
                    acc(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (x, w) = (self.val(*a), self.val(*b));
                    acc(*a, g.zip(w, |p, q| p * q));
                    acc(*b, g.zip(x, |p, q| p * q));
                }
                Op::MulRow(a, row) => {
                    let (x, r) = (self.val(*a), self.val(*row));
                    let mut dx = g.clone();
                    for rr in 0..dx.rows {
                        for (o, v) in dx.data[rr * dx.cols..(rr + 1) * dx.cols].iter_mut().zip(&r.data) {
                            *o *= v;
                        }
                    }
                    acc(*row, g.zip(x, |p, q| p * q).column_sums());
                    acc(*a, dx);
                }
                Op::Scale(a, k) => acc(*a, g.map(|v| v * k)),
                Op::SoftmaxRows(a) => {
                    let mut dx = Tensor2::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                        for c in 0..y.cols {
                            dx.data[r * y.cols + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    acc(*a, dx);
                }
                Op::LayerNormRows(a) => {
                    let x = self.val(*a);
                    let n = x.cols as f64;
                    let mut dx = Tensor2::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let xr = x.row(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let (yr, gr) = (y.row(r), g.row(r));
                        let gm = gr.iter().sum::<f64>() / n;
                        let gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n;
                        for c in 0..x.cols {
                            dx.data[r * x.cols + c] = inv * (gr[c] - gm - yr[c] * gy);
                        }
                    }
                    acc(*a, dx);
                }
                Op::Elu(a) => {
                    let x = self.val(*a);
                    acc(*a, g.zip(x, |p, q| if q > 0.0 { p } else { p * q.exp() }));
                }
                Op::Sigmoid(a) => acc(*a, g.zip(y, |p, q| p * q * (1.0 - q))),
                Op::Glu(a) => {
                    let x = self.val(*a);
                    let h = y.cols;
                    let mut dx = Tensor2::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        let xr = x.row(r);
                        for c in 0..h {
                            let s = sigmoid(xr[h + c]);
                            let gv = g.data[r * h + c];
                            dx.data[r * x.cols + c] = gv * s;
                            dx.data[r * x.cols + h + c] = gv * xr[c] * s * (1.0 - s);
                        }
                    }
                    acc(*a, dx);
                }
                Op::Dropout(a, mask) => acc(*a, g.zip(mask, |p, q| p * q)),
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.val(p);
                        let n = t.rows * t.cols;
                        acc(
                            p,
                            Tensor2 {
                                rows: t.rows,
                                cols: t.cols,
                                data: g.data[offset..offset + n].to_vec(),
                            },
                        );
                        offset += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let t = self.val(p);
                        let mut d = Tensor2::zeros(t.rows, t.cols);
                        for r in 0..t.rows {
                            d.data[r * t.cols..(r + 1) * t.cols]
                                .copy_from_slice(&g.row(r)[offset..offset + t.cols]);
                        }
                        offset += t.cols;
                        acc(p, d);
                    }
                }
                Op::SliceRows(a, start) => {
                    let x = self.val(*a);
                    let mut d = Tensor2::zeros(x.rows, x.cols);
                    d.data[start * x.cols..start * x.cols + g.data.len()].copy_from_slice(&g.data);
                    acc(*a, d);
                }
                Op::SliceCols(a, start) => {
                    let x = self.val(*a);
                    let mut d = Tensor2::zeros(x.rows, x.cols);
                    for r in 0..x.rows {
                        d.data[r * x.cols + start..r * x.cols + start + g.cols].copy_from_slice(g.row(r));
                    }
                    acc(*a, d);
                }
                Op::Transpose(a) => acc(*a, g.transpose()),
                Op::Reshape(a) => {
                    let x = self.val(*a);
                    acc(
                        *a,
                        Tensor2 {
                            rows: x.rows,
                            cols: x.cols,
                            data: g.data.clone(),
                        },
                    );
                }
                Op::Sum(a) => {
                    let x = self.val(*a);
                    acc(*a, Tensor2::filled(x.rows, x.cols, g.data[0]));
                }
                Op::BceWithLogits(a, target) => {
                    let z = self.val(*a).data[0];
                    acc(*a, Tensor2::scalar(g.data[0] * (sigmoid(z) - target)));
                }
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

/// Gradient of the loss with respect to each tape node.
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// `None` when the node does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor2> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
