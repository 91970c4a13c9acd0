//! Wengert tape: records tensor operations during the forward pass and
//! replays them in reverse to accumulate gradients.
//!
//! Usage pattern: create a [`Tape`], register parameters and constants as
//! leaves, build the expression through the op methods, then call
//! [`Tape::backward`] on a scalar output. Gradients for parameter leaves are
//! read back with [`Tape::param_grad`], which returns exact zeros for
//! parameters the loss never touched. A tape is single-use: after `backward`
//! it no longer accepts new operations.

use alloc::rc::Rc;
use alloc::vec::Vec;

use super::{dgemm_rowmajor, Tensor};
use crate::error::{invalid_err, nonfinite_err, shape_err, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(u32);

impl Var {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Input leaf (parameter or constant; only parameters require gradients).
    Leaf,
    /// `[m,k] @ [k,n]`.
    Matmul { a: Var, b: Var },
    /// `x + row` broadcast over rows (bias addition).
    AddRow { x: Var, row: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    /// Element-wise product, same shape.
    Mul { a: Var, b: Var },
    /// `k * x`.
    Scale { x: Var, k: f64 },
    /// `x + k`.
    AddScalar { x: Var, k: f64 },
    /// `x + s` with `s` a `[1,1]` variable broadcast everywhere.
    AddScalarVar { x: Var, s: Var },
    /// `out[i,j] = x[i,j] * s[i,0]` — per-row scaling by a column.
    MulCol { x: Var, s: Var },
    /// `out[i,j] = x[i,j] * row[0,j]` — per-column scaling by a row.
    MulRow { x: Var, row: Var },
    /// Row sums: `[r,c] -> [r,1]`.
    SumCols { x: Var },
    SumAll { x: Var },
    MeanAll { x: Var },
    Tanh { x: Var },
    Sigmoid { x: Var },
    Exp { x: Var },
    /// Values clamped to `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    Clamp { x: Var, lo: f64, hi: f64 },
    /// Element-wise minimum; gradient follows the smaller operand (ties -> `a`).
    Min { a: Var, b: Var },
    /// Column-wise concatenation of equal-row tensors.
    ConcatCols { parts: Vec<Var> },
    /// Columns `[start, start+len)`.
    SliceCols { x: Var, start: usize, len: usize },
    /// `out[p] = x[idx[p]]` row selection.
    GatherRows { x: Var, idx: Rc<[u32]> },
    /// `out[idx[p]] += x[p]` over `out_rows` rows (segment sum).
    ScatterAddRows { x: Var, idx: Rc<[u32]>, out_rows: usize },
    /// Fused dense layer: `act(x @ w + b)` in one node (the MLP hot path).
    Linear { x: Var, w: Var, b: Var, act: LinAct },
}

/// Activation fused into [`Op::Linear`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinAct {
    Tanh,
    Identity,
}

/// Reverse-mode tape over [`Tensor`] values.
pub struct Tape {
    ops: Vec<Op>,
    vals: Vec<Tensor>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Tensor>>,
    done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            ops: Vec::new(),
            vals: Vec::new(),
            needs_grad: Vec::new(),
            grads: Vec::new(),
            done: false,
        }
    }

    /// Number of recorded nodes (leaves included).
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Value of a recorded variable.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.idx()]
    }

    /// Register a trainable leaf (snapshots the tensor).
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.push(Op::Leaf, t.clone(), true)
    }

    /// Register a non-trainable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn push(&mut self, op: Op, val: Tensor, needs: bool) -> Var {
        debug_assert!(!self.done, "tape already consumed by backward");
        let id = self.ops.len() as u32;
        self.ops.push(op);
        self.vals.push(val);
        self.needs_grad.push(needs);
        self.grads.push(None);
        Var(id)
    }

    fn needs(&self, v: Var) -> bool {
        self.needs_grad[v.idx()]
    }

    fn check_active(&self) -> Result<()> {
        if self.done {
            Err(invalid_err!("tape inactive: backward already ran"))
        } else {
            Ok(())
        }
    }

    /// Scan a recorded value and fail with `context` if anything is NaN/Inf.
    pub fn ensure_finite(&self, v: Var, context: &str) -> Result<()> {
        if self.value(v).all_finite() {
            Ok(())
        } else {
            Err(nonfinite_err!("{context}"))
        }
    }

    // ── Operations ──────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_active()?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(shape_err!(
                "matmul {:?} by {:?}",
                ta.shape(),
                tb.shape()
            ));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(m, n);
        dgemm_rowmajor(
            m, k, n, 1.0,
            ta.data(), k as isize, 1,
            tb.data(), n as isize, 1,
            0.0,
            out.data_mut(),
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Matmul { a, b }, out, needs))
    }

    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_active()?;
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows() != 1 || tr.cols() != tx.cols() {
            return Err(shape_err!("add_row {:?} + {:?}", tx.shape(), tr.shape()));
        }
        let cols = tx.cols();
        let mut out = tx.clone();
        let rd = tr.data().to_vec();
        for chunk in out.data_mut().chunks_exact_mut(cols) {
            for (o, r) in chunk.iter_mut().zip(&rd) {
                *o += r;
            }
        }
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(Op::AddRow { x, row }, out, needs))
    }

    fn binary_same_shape(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.check_active()?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err!("{name} {:?} vs {:?}", ta.shape(), tb.shape()));
        }
        let mut out = ta.clone();
        let bd = tb.data();
        for (o, &bv) in out.data_mut().iter_mut().zip(bd) {
            *o = f(*o, bv);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(op, out, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        self.check_active()?;
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v *= k;
        }
        let needs = self.needs(x);
        Ok(self.push(Op::Scale { x, k }, out, needs))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        self.check_active()?;
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v += k;
        }
        let needs = self.needs(x);
        Ok(self.push(Op::AddScalar { x, k }, out, needs))
    }

    pub fn add_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check_active()?;
        if !self.value(s).is_scalar() {
            return Err(shape_err!("add_scalar_var needs [1,1] s, got {:?}", self.value(s).shape()));
        }
        let sv = self.value(s).item();
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v += sv;
        }
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(Op::AddScalarVar { x, s }, out, needs))
    }

    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check_active()?;
        let (tx, ts) = (self.value(x), self.value(s));
        if ts.cols() != 1 || ts.rows() != tx.rows() {
            return Err(shape_err!("mul_col {:?} by {:?}", tx.shape(), ts.shape()));
        }
        let cols = tx.cols();
        let sd = ts.data().to_vec();
        let mut out = tx.clone();
        for (i, chunk) in out.data_mut().chunks_exact_mut(cols).enumerate() {
            let k = sd[i];
            for v in chunk {
                *v *= k;
            }
        }
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(Op::MulCol { x, s }, out, needs))
    }

    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_active()?;
        let (tx, tr) = (self.value(x), self.value(row));
        if tr.rows() != 1 || tr.cols() != tx.cols() {
            return Err(shape_err!("mul_row {:?} by {:?}", tx.shape(), tr.shape()));
        }
        let cols = tx.cols();
        let rd = tr.data().to_vec();
        let mut out = tx.clone();
        for chunk in out.data_mut().chunks_exact_mut(cols) {
            for (v, r) in chunk.iter_mut().zip(&rd) {
                *v *= r;
            }
        }
        let needs = self.needs(x) || self.needs(row);
        Ok(self.push(Op::MulRow { x, row }, out, needs))
    }

    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        self.check_active()?;
        let tx = self.value(x);
        let cols = tx.cols();
        let mut out = Tensor::zeros(tx.rows(), 1);
        for (i, chunk) in tx.data().chunks_exact(cols).enumerate() {
            out.data_mut()[i] = chunk.iter().sum();
        }
        let needs = self.needs(x);
        Ok(self.push(Op::SumCols { x }, out, needs))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check_active()?;
        let s: f64 = self.value(x).data().iter().sum();
        let needs = self.needs(x);
        Ok(self.push(Op::SumAll { x }, Tensor::scalar(s), needs))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.check_active()?;
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(shape_err!("mean_all of empty tensor"));
        }
        let s: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        let needs = self.needs(x);
        Ok(self.push(Op::MeanAll { x }, Tensor::scalar(s), needs))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        self.check_active()?;
        let mut out = self.value(x).clone();
        for v in out.data_mut() {
            *v = f(*v);
        }
        let needs = self.needs(x);
        Ok(self.push(op, out, needs))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, crate::math::tanh, Op::Tanh { x })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, crate::math::sigmoid, Op::Sigmoid { x })
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, crate::math::exp, Op::Exp { x })
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(invalid_err!("clamp with lo {lo} > hi {hi}"));
        }
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "min", f64::min, Op::Min { a, b })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.check_active()?;
        if parts.is_empty() {
            return Err(shape_err!("concat_cols of zero parts"));
        }
        let rows = self.value(parts[0]).rows();
        let mut total = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err!("concat_cols row mismatch"));
            }
            total += self.value(p).cols();
        }
        let mut out = Tensor::zeros(rows, total);
        {
            let od = out.data_mut();
            let mut offset = 0;
            for &p in parts {
                let t = &self.vals[p.idx()];
                let c = t.cols();
                for i in 0..rows {
                    od[i * total + offset..i * total + offset + c]
                        .copy_from_slice(t.row_slice(i));
                }
                offset += c;
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Op::ConcatCols { parts: parts.to_vec() }, out, needs))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check_active()?;
        let tx = self.value(x);
        if start + len > tx.cols() {
            return Err(shape_err!(
                "slice_cols [{start}, {}) of {:?}",
                start + len,
                tx.shape()
            ));
        }
        let rows = tx.rows();
        let cols = tx.cols();
        let mut out = Tensor::zeros(rows, len);
        for i in 0..rows {
            out.data_mut()[i * len..(i + 1) * len]
                .copy_from_slice(&tx.data()[i * cols + start..i * cols + start + len]);
        }
        let needs = self.needs(x);
        Ok(self.push(Op::SliceCols { x, start, len }, out, needs))
    }

    pub fn gather_rows(&mut self, x: Var, idx: Rc<[u32]>) -> Result<Var> {
        self.check_active()?;
        let tx = self.value(x);
        let rows = tx.rows();
        if idx.iter().any(|&i| i as usize >= rows) {
            return Err(shape_err!("gather_rows index out of range (rows {rows})"));
        }
        let cols = tx.cols();
        let mut out = Tensor::zeros(idx.len(), cols);
        for (p, &i) in idx.iter().enumerate() {
            out.data_mut()[p * cols..(p + 1) * cols].copy_from_slice(tx.row_slice(i as usize));
        }
        let needs = self.needs(x);
        Ok(self.push(Op::GatherRows { x, idx }, out, needs))
    }

    /// Segment sum: `out[idx[p]] += x[p]`, producing `out_rows` rows.
    pub fn scatter_add_rows(&mut self, x: Var, idx: Rc<[u32]>, out_rows: usize) -> Result<Var> {
        self.check_active()?;
        let tx = self.value(x);
        if idx.len() != tx.rows() {
            return Err(shape_err!(
                "scatter_add_rows: {} indices for {} rows",
                idx.len(),
                tx.rows()
            ));
        }
        if idx.iter().any(|&i| i as usize >= out_rows) {
            return Err(shape_err!("scatter_add_rows index out of range"));
        }
        let cols = tx.cols();
        let mut out = Tensor::zeros(out_rows, cols);
        for (p, &i) in idx.iter().enumerate() {
            let dst = &mut out.data_mut()[i as usize * cols..(i as usize + 1) * cols];
            let src = &tx.data()[p * cols..(p + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Op::ScatterAddRows { x, idx, out_rows }, out, needs))
    }

    // ── Backward ────────────────────────────────────────────────────────

    fn accumulate(&mut self, v: Var, grad: Tensor) {
        if !self.needs_grad[v.idx()] {
            return;
        }
        match &mut self.grads[v.idx()] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(grad.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(grad),
        }
    }

    /// Accumulate gradients of `loss` (a `[1,1]` scalar) into every
    /// gradient-requiring node; consumes the tape's ability to record.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.check_active()?;
        if !self.value(loss).is_scalar() {
            return Err(shape_err!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            ));
        }
        if !self.value(loss).all_finite() {
            return Err(nonfinite_err!("loss"));
        }
        self.done = true;
        self.grads[loss.idx()] = Some(Tensor::scalar(1.0));

        for id in (0..self.ops.len()).rev() {
            if !self.needs_grad[id] {
                continue;
            }
            let Some(d) = self.grads[id].take() else {
                continue;
            };
            let op = self.ops[id].clone();
            self.backward_op(id, &op, &d);
            // Leaf gradients are the results; interior grads are transient.
            if matches!(op, Op::Leaf) {
                self.grads[id] = Some(d);
            }
        }
        Ok(())
    }

    fn backward_op(&mut self, id: usize, op: &Op, d: &Tensor) {
        match *op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = (self.vals[a.idx()].rows(), self.vals[a.idx()].cols());
                let n = self.vals[b.idx()].cols();
                if self.needs(a) {
                    // dA = d @ B^T
                    let mut da = Tensor::zeros(m, k);
                    dgemm_rowmajor(
                        m, n, k, 1.0,
                        d.data(), n as isize, 1,
                        self.vals[b.idx()].data(), 1, n as isize,
                        0.0,
                        da.data_mut(),
                    );
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    // dB = A^T @ d
                    let mut db = Tensor::zeros(k, n);
                    dgemm_rowmajor(
                        k, m, n, 1.0,
                        self.vals[a.idx()].data(), 1, k as isize,
                        d.data(), n as isize, 1,
                        0.0,
                        db.data_mut(),
                    );
                    self.accumulate(b, db);
                }
            }
            Op::AddRow { x, row } => {
                if self.needs(x) {
                    self.accumulate(x, d.clone());
                }
                if self.needs(row) {
                    let cols = d.cols();
                    let mut dr = Tensor::zeros(1, cols);
                    for chunk in d.data().chunks_exact(cols) {
                        for (g, v) in dr.data_mut().iter_mut().zip(chunk) {
                            *g += v;
                        }
                    }
                    self.accumulate(row, dr);
                }
            }
            Op::Add { a, b } => {
                if self.needs(a) {
                    self.accumulate(a, d.clone());
                }
                if self.needs(b) {
                    self.accumulate(b, d.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.needs(a) {
                    self.accumulate(a, d.clone());
                }
                if self.needs(b) {
                    let mut nd = d.clone();
                    for v in nd.data_mut() {
                        *v = -*v;
                    }
                    self.accumulate(b, nd);
                }
            }
            Op::Mul { a, b } => {
                if self.needs(a) {
                    let mut da = d.clone();
                    for (g, v) in da.data_mut().iter_mut().zip(self.vals[b.idx()].data()) {
                        *g *= v;
                    }
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    let mut db = d.clone();
                    for (g, v) in db.data_mut().iter_mut().zip(self.vals[a.idx()].data()) {
                        *g *= v;
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Scale { x, k } => {
                if self.needs(x) {
                    let mut dx = d.clone();
                    for v in dx.data_mut() {
                        *v *= k;
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::AddScalar { x, .. } => {
                if self.needs(x) {
                    self.accumulate(x, d.clone());
                }
            }
            Op::AddScalarVar { x, s } => {
                if self.needs(x) {
                    self.accumulate(x, d.clone());
                }
                if self.needs(s) {
                    self.accumulate(s, Tensor::scalar(d.data().iter().sum()));
                }
            }
            Op::MulCol { x, s } => {
                let cols = d.cols();
                if self.needs(x) {
                    let mut dx = d.clone();
                    let sd = self.vals[s.idx()].data();
                    for (i, chunk) in dx.data_mut().chunks_exact_mut(cols).enumerate() {
                        for v in chunk {
                            *v *= sd[i];
                        }
                    }
                    self.accumulate(x, dx);
                }
                if self.needs(s) {
                    let xd = self.vals[x.idx()].data();
                    let mut ds = Tensor::zeros(d.rows(), 1);
                    for (i, chunk) in d.data().chunks_exact(cols).enumerate() {
                        let mut acc = 0.0;
                        for (j, v) in chunk.iter().enumerate() {
                            acc += v * xd[i * cols + j];
                        }
                        ds.data_mut()[i] = acc;
                    }
                    self.accumulate(s, ds);
                }
            }
            Op::MulRow { x, row } => {
                let cols = d.cols();
                if self.needs(x) {
                    let mut dx = d.clone();
                    let rd = self.vals[row.idx()].data();
                    for chunk in dx.data_mut().chunks_exact_mut(cols) {
                        for (v, r) in chunk.iter_mut().zip(rd) {
                            *v *= r;
                        }
                    }
                    self.accumulate(x, dx);
                }
                if self.needs(row) {
                    let xd = self.vals[x.idx()].data();
                    let mut dr = Tensor::zeros(1, cols);
                    for (i, chunk) in d.data().chunks_exact(cols).enumerate() {
                        for (j, v) in chunk.iter().enumerate() {
                            dr.data_mut()[j] += v * xd[i * cols + j];
                        }
                    }
                    self.accumulate(row, dr);
                }
            }
            Op::SumCols { x } => {
                if self.needs(x) {
                    let t = &self.vals[x.idx()];
                    let (rows, cols) = (t.rows(), t.cols());
                    let mut dx = Tensor::zeros(rows, cols);
                    for (i, chunk) in dx.data_mut().chunks_exact_mut(cols).enumerate() {
                        let g = d.data()[i];
                        for v in chunk {
                            *v = g;
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::SumAll { x } => {
                if self.needs(x) {
                    let t = &self.vals[x.idx()];
                    self.accumulate(x, Tensor::full(t.rows(), t.cols(), d.item()));
                }
            }
            Op::MeanAll { x } => {
                if self.needs(x) {
                    let t = &self.vals[x.idx()];
                    let g = d.item() / t.numel() as f64;
                    self.accumulate(x, Tensor::full(t.rows(), t.cols(), g));
                }
            }
            Op::Tanh { x } => {
                if self.needs(x) {
                    // d/dx tanh = 1 - y^2, with y the stored output.
                    let mut dx = d.clone();
                    for (g, &y) in dx.data_mut().iter_mut().zip(self.vals[id].data()) {
                        *g *= 1.0 - y * y;
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::Sigmoid { x } => {
                if self.needs(x) {
                    let mut dx = d.clone();
                    for (g, &y) in dx.data_mut().iter_mut().zip(self.vals[id].data()) {
                        *g *= y * (1.0 - y);
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::Exp { x } => {
                if self.needs(x) {
                    let mut dx = d.clone();
                    for (g, &y) in dx.data_mut().iter_mut().zip(self.vals[id].data()) {
                        *g *= y;
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.needs(x) {
                    let xd = self.vals[x.idx()].data();
                    let mut dx = d.clone();
                    for (v, &xv) in dx.data_mut().iter_mut().zip(xd) {
                        if xv < lo || xv > hi {
                            *v = 0.0;
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::Min { a, b } => {
                // `a_wins[i]` marks entries where gradient flows to `a`
                // (ties included).
                let a_wins: Vec<bool> = self.vals[a.idx()]
                    .data()
                    .iter()
                    .zip(self.vals[b.idx()].data())
                    .map(|(av, bv)| av <= bv)
                    .collect();
                if self.needs(a) {
                    let mut da = d.clone();
                    for (v, &w) in da.data_mut().iter_mut().zip(&a_wins) {
                        if !w {
                            *v = 0.0;
                        }
                    }
                    self.accumulate(a, da);
                }
                if self.needs(b) {
                    let mut db = d.clone();
                    for (v, &w) in db.data_mut().iter_mut().zip(&a_wins) {
                        if w {
                            *v = 0.0;
                        }
                    }
                    self.accumulate(b, db);
                }
            }
            Op::ConcatCols { ref parts } => {
                let rows = d.rows();
                let total = d.cols();
                let mut offset = 0;
                for &p in parts {
                    let c = self.vals[p.idx()].cols();
                    if self.needs(p) {
                        let mut dp = Tensor::zeros(rows, c);
                        for i in 0..rows {
                            dp.data_mut()[i * c..(i + 1) * c].copy_from_slice(
                                &d.data()[i * total + offset..i * total + offset + c],
                            );
                        }
                        self.accumulate(p, dp);
                    }
                    offset += c;
                }
            }
            Op::SliceCols { x, start, len } => {
                if self.needs(x) {
                    let t = &self.vals[x.idx()];
                    let (rows, cols) = (t.rows(), t.cols());
                    let mut dx = Tensor::zeros(rows, cols);
                    for i in 0..rows {
                        dx.data_mut()[i * cols + start..i * cols + start + len]
                            .copy_from_slice(&d.data()[i * len..(i + 1) * len]);
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::GatherRows { x, ref idx } => {
                if self.needs(x) {
                    let t = &self.vals[x.idx()];
                    let cols = t.cols();
                    let mut dx = Tensor::zeros(t.rows(), cols);
                    for (p, &i) in idx.iter().enumerate() {
                        let dst = &mut dx.data_mut()[i as usize * cols..(i as usize + 1) * cols];
                        for (g, v) in dst.iter_mut().zip(&d.data()[p * cols..(p + 1) * cols]) {
                            *g += v;
                        }
                    }
                    self.accumulate(x, dx);
                }
            }
            Op::ScatterAddRows { x, ref idx, .. } => {
                if self.needs(x) {
                    let cols = d.cols();
                    let mut dx = Tensor::zeros(idx.len(), cols);
                    for (p, &i) in idx.iter().enumerate() {
                        dx.data_mut()[p * cols..(p + 1) * cols]
                            .copy_from_slice(&d.data()[i as usize * cols..(i as usize + 1) * cols]);
                    }
                    self.accumulate(x, dx);
                }
            }
        }
    }

    /// Gradient of a leaf after [`Tape::backward`]; `None` for interior nodes
    /// or if backward has not run.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.idx()].as_ref()
    }

    /// Gradient for a parameter leaf; exact zeros when the loss never
    /// reached it.
    pub fn param_grad(&self, v: Var) -> Tensor {
        match &self.grads[v.idx()] {
            Some(g) => g.clone(),
            None => {
                let t = &self.vals[v.idx()];
                Tensor::zeros(t.rows(), t.cols())
            }
        }
    }

    /// Re-execute every recorded op from the leaf values and compare against
    /// the stored outputs. Returns the largest absolute deviation (0.0 means
    /// bit-identical replay).
    pub fn replay_max_deviation(&self) -> f64 {
        let mut replayed: Vec<Tensor> = Vec::with_capacity(self.vals.len());
        let mut worst = 0.0f64;
        for (id, op) in self.ops.iter().enumerate() {
            let v = match *op {
                Op::Leaf => self.vals[id].clone(),
                _ => replay_op(op, &replayed),
            };
            let dev = v
                .data()
                .iter()
                .zip(self.vals[id].data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            worst = worst.max(dev);
            replayed.push(v);
        }
        worst
    }
}

fn replay_op(op: &Op, vals: &[Tensor]) -> Tensor {
    let v = |x: Var| &vals[x.idx()];
    match *op {
        Op::Leaf => unreachable!(),
        Op::Matmul { a, b } => v(a).matmul(v(b)).expect("replay matmul"),
        Op::AddRow { x, row } => {
            let mut out = v(x).clone();
            let cols = out.cols();
            for chunk in out.data_mut().chunks_exact_mut(cols) {
                for (o, r) in chunk.iter_mut().zip(v(row).data()) {
                    *o += r;
                }
            }
            out
        }
        Op::Add { a, b } => zip_with(v(a), v(b), |x, y| x + y),
        Op::Sub { a, b } => zip_with(v(a), v(b), |x, y| x - y),
        Op::Mul { a, b } => zip_with(v(a), v(b), |x, y| x * y),
        Op::Scale { x, k } => map(v(x), |a| a * k),
        Op::AddScalar { x, k } => map(v(x), |a| a + k),
        Op::AddScalarVar { x, s } => {
            let sv = v(s).item();
            map(v(x), |a| a + sv)
        }
        Op::MulCol { x, s } => {
            let mut out = v(x).clone();
            let cols = out.cols();
            let sd = v(s).data().to_vec();
            for (i, chunk) in out.data_mut().chunks_exact_mut(cols).enumerate() {
                for val in chunk {
                    *val *= sd[i];
                }
            }
            out
        }
        Op::MulRow { x, row } => {
            let mut out = v(x).clone();
            let cols = out.cols();
            let rd = v(row).data().to_vec();
            for chunk in out.data_mut().chunks_exact_mut(cols) {
                for (val, r) in chunk.iter_mut().zip(&rd) {
                    *val *= r;
                }
            }
            out
        }
        Op::SumCols { x } => {
            let t = v(x);
            let mut out = Tensor::zeros(t.rows(), 1);
            for (i, chunk) in t.data().chunks_exact(t.cols()).enumerate() {
                out.data_mut()[i] = chunk.iter().sum();
            }
            out
        }
        Op::SumAll { x } => Tensor::scalar(v(x).data().iter().sum()),
        Op::MeanAll { x } => {
            Tensor::scalar(v(x).data().iter().sum::<f64>() / v(x).numel() as f64)
        }
        Op::Tanh { x } => map(v(x), crate::math::tanh),
        Op::Sigmoid { x } => map(v(x), crate::math::sigmoid),
        Op::Exp { x } => map(v(x), crate::math::exp),
        Op::Clamp { x, lo, hi } => map(v(x), |a| a.clamp(lo, hi)),
        Op::Min { a, b } => zip_with(v(a), v(b), f64::min),
        Op::ConcatCols { ref parts } => {
            let rows = v(parts[0]).rows();
            let total: usize = parts.iter().map(|&p| v(p).cols()).sum();
            let mut out = Tensor::zeros(rows, total);
            let mut offset = 0;
            for &p in parts {
                let t = v(p);
                for i in 0..rows {
                    out.data_mut()[i * total + offset..i * total + offset + t.cols()]
                        .copy_from_slice(t.row_slice(i));
                }
                offset += t.cols();
            }
            out
        }
        Op::SliceCols { x, start, len } => {
            let t = v(x);
            let mut out = Tensor::zeros(t.rows(), len);
            for i in 0..t.rows() {
                out.data_mut()[i * len..(i + 1) * len]
                    .copy_from_slice(&t.data()[i * t.cols() + start..i * t.cols() + start + len]);
            }
            out
        }
        Op::GatherRows { x, ref idx } => {
            let t = v(x);
            let cols = t.cols();
            let mut out = Tensor::zeros(idx.len(), cols);
            for (p, &i) in idx.iter().enumerate() {
                out.data_mut()[p * cols..(p + 1) * cols].copy_from_slice(t.row_slice(i as usize));
            }
            out
        }
        Op::ScatterAddRows { x, ref idx, out_rows } => {
            let t = v(x);
            let cols = t.cols();
            let mut out = Tensor::zeros(out_rows, cols);
            for (p, &i) in idx.iter().enumerate() {
                let dst = &mut out.data_mut()[i as usize * cols..(i as usize + 1) * cols];
                for (dv, sv) in dst.iter_mut().zip(&t.data()[p * cols..(p + 1) * cols]) {
                    *dv += sv;
                }
            }
            out
        }
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = t.clone();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x = f(*x, *y);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(2, 3, vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap());
        let loss = tape.sum_all(x).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.param_grad(x).data(), &[1.0; 6]);
    }

    #[test]
    fn quadratic_form_gradient_zero_at_zero_weights() {
        // loss = || W x ||^2 with W = 0 -> dW = 0.
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::zeros(3, 2));
        let x = tape.constant(Tensor::new(2, 1, vec![1.0, 2.0]).unwrap());
        let wx = tape.matmul(w, x).unwrap();
        let sq = tape.mul(wx, wx).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.param_grad(w).data(), &[0.0; 6]);
    }

    #[test]
    fn unreached_parameter_gets_exact_zero() {
        let mut tape = Tape::new();
        let used = tape.param(&Tensor::scalar(2.0));
        let unused = tape.param(&Tensor::new(1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let loss = tape.mul(used, used).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.param_grad(used).item(), 4.0);
        assert_eq!(tape.param_grad(unused).data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::zeros(2, 2));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn tape_inactive_after_backward() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::scalar(1.0));
        let loss = tape.mul(x, x).unwrap();
        tape.backward(loss).unwrap();
        assert!(tape.backward(loss).is_err());
        assert!(tape.scale(x, 2.0).is_err());
    }

    #[test]
    fn gather_scatter_roundtrip_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(&Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let idx: Rc<[u32]> = Rc::from(vec![0u32, 2, 2].into_boxed_slice());
        let g = tape.gather_rows(x, idx.clone()).unwrap();
        let s = tape.scatter_add_rows(g, Rc::from(vec![1u32, 0, 0].into_boxed_slice()), 2).unwrap();
        assert_eq!(tape.value(s).data(), &[10.0, 12.0, 1.0, 2.0]);
        let loss = tape.sum_all(s).unwrap();
        tape.backward(loss).unwrap();
        // Row 0 used once, row 1 never, row 2 twice.
        assert_eq!(tape.param_grad(x).data(), &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let w = tape.param(&Tensor::new(2, 2, vec![0.3, -0.7, 1.1, 0.2]).unwrap());
        let x = tape.constant(Tensor::new(2, 2, vec![0.5, 1.5, -0.25, 2.0]).unwrap());
        let y = tape.matmul(w, x).unwrap();
        let t = tape.tanh(y).unwrap();
        let s = tape.sigmoid(t).unwrap();
        let _ = tape.mean_all(s).unwrap();
        assert_eq!(tape.replay_max_deviation(), 0.0);
    }

    #[test]
    fn min_routes_gradient_to_smaller_side() {
        let mut tape = Tape::new();
        let a = tape.param(&Tensor::new(1, 3, vec![1.0, 5.0, 2.0]).unwrap());
        let b = tape.param(&Tensor::new(1, 3, vec![2.0, 3.0, 2.0]).unwrap());
        let m = tape.min(a, b).unwrap();
        let loss = tape.sum_all(m).unwrap();
        tape.backward(loss).unwrap();
        // Ties go to `a`.
        assert_eq!(tape.param_grad(a).data(), &[1.0, 0.0, 1.0]);
        assert_eq!(tape.param_grad(b).data(), &[0.0, 1.0, 0.0]);
    }
}
