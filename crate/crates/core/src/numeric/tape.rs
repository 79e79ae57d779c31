//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation evaluates eagerly, appends a node holding its value and
//! whatever it needs for the vector-Jacobian product, and returns a [`Var`]
//! handle. [`Tape::backward`] walks the nodes in exact reverse order of
//! creation; gradients reaching a node from several consumers are summed.
//!
//! The tape also counts multiply-add work of every product it evaluates,
//! bucketed by [`FlopKind`], which the inference benchmarks report.

use std::sync::Arc;

use super::ops::{self, Mask};
use super::{Matrix, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopKind {
    /// Token-wise linear maps (projections, feed-forward blocks, heads).
    Projection,
    /// Score and pooling products inside attention.
    Attention,
    /// Everything else (loss logits, embedding mixing).
    Other,
}

/// Floating point operations of evaluated products, `2·m·k·n` each.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct FlopCounter {
    pub projection: u64,
    pub attention: u64,
    pub other: u64,
}

impl FlopCounter {
    pub fn total(&self) -> u64 {
        self.projection + self.attention + self.other
    }

    fn add(&mut self, kind: FlopKind, flops: u64) {
        match kind {
            FlopKind::Projection => self.projection += flops,
            FlopKind::Attention => self.attention += flops,
            FlopKind::Other => self.other += flops,
        }
    }
}

impl std::ops::Add for FlopCounter {
    type Output = FlopCounter;
    fn add(self, o: FlopCounter) -> FlopCounter {
        FlopCounter {
            projection: self.projection + o.projection,
            attention: self.attention + o.attention,
            other: self.other + o.other,
        }
    }
}

enum Op<T: Scalar> {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Silu(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        inv_std: Vec<T>,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    MaskedSilu {
        x: Var,
        mask: Arc<Mask>,
        row_scale: Vec<T>,
    },
    MaskedSoftmax {
        x: Var,
        mask: Arc<Mask>,
    },
    GatherScalars {
        table: Var,
        idx: Vec<Option<usize>>,
    },
    RowDot(Var, Var),
    ScaleRows(Var, Var),
    SoftmaxXent {
        x: Var,
        targets: Vec<usize>,
        probs: Matrix<T>,
    },
    BceLogits {
        x: Var,
        labels: Matrix<T>,
        weights: Vec<T>,
    },
    Sum(Var),
}

struct Node<T: Scalar> {
    value: Matrix<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Tape<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
    flops: FlopCounter,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            flops: FlopCounter::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn flops(&self) -> FlopCounter {
        self.flops
    }

    pub fn value(&self, v: Var) -> &Matrix<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Matrix<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Matrix<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Matrix<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.push_raw(value, op, needs_grad)
    }

    fn count(&mut self, kind: FlopKind, m: usize, k: usize, n: usize) {
        self.flops.add(kind, 2 * (m as u64) * (k as u64) * (n as u64));
    }

    pub fn matmul(&mut self, a: Var, b: Var, kind: FlopKind) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let (m, k) = self.shape(a);
        self.count(kind, m, k, value.cols());
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: Var, b: Var, kind: FlopKind) -> Result<Var> {
        let value = self.value(a).matmul_bt(self.value(b))?;
        let (m, k) = self.shape(a);
        self.count(kind, m, k, value.cols());
        Ok(self.push(value, Op::MatMulBt(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    /// Broadcasts a `1 × c` bias over the rows of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let value = self.value(x).add_row(self.value(bias))?;
        Ok(self.push(value, Op::AddRow(x, bias), &[x, bias]))
    }

    /// `x · w + b`, the affine map used throughout.
    pub fn linear(&mut self, x: Var, w: Var, b: Var, kind: FlopKind) -> Result<Var> {
        let xw = self.matmul(x, w, kind)?;
        self.add_row(xw, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).scale(s);
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = ops::silu(self.value(a));
        self.push(value, Op::Silu(a), &[a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = ops::gelu(self.value(a));
        self.push(value, Op::Gelu(a), &[a])
    }

    /// Row-wise layer norm without affine parameters.
    pub fn layer_norm(&mut self, x: Var, eps: T) -> Var {
        let (value, inv_std) = ops::layer_norm_rows(self.value(x), eps);
        self.push(value, Op::LayerNorm { x, inv_std }, &[x])
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_cols(start, len);
        self.push(value, Op::SliceCols { x, start }, &[x])
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Var {
        let value = self.value(x).slice_rows(start, len);
        self.push(value, Op::SliceRows { x, start }, &[x])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::hcat(&mats)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let mats: Vec<&Matrix<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Matrix::vcat(&mats)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Row `i` of the result is row `idx[i]` of `x`; repeated indices are allowed.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let rows = self.value(x).rows();
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::Invalid(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let value = self.value(x).select_rows(&idx);
        Ok(self.push(value, Op::GatherRows { x, idx }, &[x]))
    }

    /// `row_scale[i] · silu(x[i][j])` where allowed, zero elsewhere.
    pub fn masked_silu(&mut self, x: Var, mask: Arc<Mask>, row_scale: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != (mask.rows(), mask.cols()) || row_scale.len() != xv.rows() {
            return Err(Error::Shape {
                op: "masked_silu",
                left: xv.shape(),
                right: (mask.rows(), mask.cols()),
            });
        }
        let mut value = Matrix::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            let s = row_scale[i];
            let src = xv.row(i);
            let allow = mask.row(i);
            for (j, o) in value.row_mut(i).iter_mut().enumerate() {
                if allow[j] {
                    *o = s * ops::silu_scalar(src[j]);
                }
            }
        }
        Ok(self.push(
            value,
            Op::MaskedSilu {
                x,
                mask,
                row_scale,
            },
            &[x],
        ))
    }

    pub fn masked_softmax(&mut self, x: Var, mask: Arc<Mask>) -> Result<Var> {
        let value = ops::softmax_rows(self.value(x), &mask)?;
        Ok(self.push(value, Op::MaskedSoftmax { x, mask }, &[x]))
    }

    /// Builds a `rows × cols` matrix whose entry `k` (row-major) is
    /// `table[idx[k]]`, or zero for `None`. `table` is `1 × len`.
    pub fn gather_scalars(
        &mut self,
        table: Var,
        idx: Vec<Option<usize>>,
        rows: usize,
        cols: usize,
    ) -> Result<Var> {
        let t = self.value(table);
        if t.rows() != 1 || idx.len() != rows * cols {
            return Err(Error::Shape {
                op: "gather_scalars",
                left: t.shape(),
                right: (rows, cols),
            });
        }
        let data = idx
            .iter()
            .map(|i| match i {
                Some(k) => t.data()[*k],
                None => T::zero(),
            })
            .collect();
        let value = Matrix::new(rows, cols, data)?;
        Ok(self.push(value, Op::GatherScalars { table, idx }, &[table]))
    }

    /// Per-row dot products, `n × 1`.
    pub fn row_dot(&mut self, a: Var, b: Var, kind: FlopKind) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(Error::Shape {
                op: "row_dot",
                left: av.shape(),
                right: bv.shape(),
            });
        }
        let data = av
            .iter_rows()
            .zip(bv.iter_rows())
            .map(|(x, y)| x.iter().zip(y).map(|(&p, &q)| p * q).sum())
            .collect();
        let value = Matrix::new(av.rows(), 1, data)?;
        self.count(kind, av.rows(), av.cols(), 1);
        Ok(self.push(value, Op::RowDot(a, b), &[a, b]))
    }

    /// `y[i][j] = x[i][j] · s[i]` for an `n × 1` column `s`.
    pub fn scale_rows(&mut self, x: Var, s: Var, kind: FlopKind) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.shape() != (xv.rows(), 1) {
            return Err(Error::Shape {
                op: "scale_rows",
                left: xv.shape(),
                right: sv.shape(),
            });
        }
        let mut value = xv.clone();
        for r in 0..value.rows() {
            let f = sv.data()[r];
            value.row_mut(r).iter_mut().for_each(|v| *v *= f);
        }
        let (m, k) = xv.shape();
        self.count(kind, m, 1, k);
        Ok(self.push(value, Op::ScaleRows(x, s), &[x, s]))
    }

    /// Mean over rows of `−ln softmax(x[r])[targets[r]]`; `1 × 1`.
    pub fn softmax_cross_entropy(&mut self, x: Var, targets: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if targets.len() != xv.rows() || xv.rows() == 0 {
            return Err(Error::Shape {
                op: "softmax_cross_entropy",
                left: xv.shape(),
                right: (targets.len(), 1),
            });
        }
        let probs = ops::softmax_rows(xv, &Mask::full(xv.rows(), xv.cols()))?;
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            let row = xv.row(r);
            loss += ops::log_sum_exp(row.iter().copied()) - row[t];
        }
        let n = T::from_usize(targets.len()).unwrap();
        let value = Matrix::scalar(loss / n);
        Ok(self.push(value, Op::SoftmaxXent { x, targets, probs }, &[x]))
    }

    /// Mean over rows of `Σ_e w_e · BCE(σ(x[r][e]), labels[r][e])`; `1 × 1`.
    pub fn bce_with_logits(&mut self, x: Var, labels: Matrix<T>, weights: Vec<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != labels.shape() || weights.len() != xv.cols() || xv.rows() == 0 {
            return Err(Error::Shape {
                op: "bce_with_logits",
                left: xv.shape(),
                right: labels.shape(),
            });
        }
        let mut loss = T::zero();
        for r in 0..xv.rows() {
            for ((&z, &y), &w) in xv.row(r).iter().zip(labels.row(r)).zip(&weights) {
                loss += w * (ops::softplus(z) - y * z);
            }
        }
        let n = T::from_usize(xv.rows()).unwrap();
        let value = Matrix::scalar(loss / n);
        Ok(self.push(
            value,
            Op::BceLogits {
                x,
                labels,
                weights,
            },
            &[x],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    /// Reverse pass from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.shape(output) != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: self.shape(output),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(T::one()));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(
        &self,
        node: &Node<T>,
        g: &Matrix<T>,
        grads: &mut [Option<Matrix<T>>],
    ) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.matmul_bt(val(*b))?);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, val(*a).matmul_at(g)?);
                }
            }
            Op::MatMulBt(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.matmul(val(*b))?);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.matmul_at(val(*a))?);
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::AddRow(x, bias) => {
                if self.wants(*x) {
                    accumulate(grads, *x, g.clone());
                }
                if self.wants(*bias) {
                    accumulate(grads, *bias, g.column_sums());
                }
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.hadamard(val(*b))?);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.hadamard(val(*a))?);
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::Silu(a) => {
                let d = val(*a).map(ops::silu_grad_scalar);
                accumulate(grads, *a, g.hadamard(&d)?);
            }
            Op::Gelu(a) => {
                let d = val(*a).map(ops::gelu_grad_scalar);
                accumulate(grads, *a, g.hadamard(&d)?);
            }
            Op::LayerNorm { x, inv_std } => {
                let y = &node.value;
                let n = T::from_usize(y.cols()).unwrap();
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let mean_g = gr.iter().copied().sum::<T>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum::<T>() / n;
                    for ((o, &gi), &yi) in dx.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = inv_std[r] * (gi - mean_g - yi * mean_gy);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::SliceCols { x, start } => {
                let (rows, cols) = val(*x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                for r in 0..rows {
                    dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, dx);
            }
            Op::SliceRows { x, start } => {
                let (rows, cols) = val(*x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                dx.data_mut()[start * cols..(start + g.rows()) * cols].copy_from_slice(g.data());
                accumulate(grads, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if self.wants(p) {
                        accumulate(grads, p, g.slice_cols(offset, w));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = val(p).rows();
                    if self.wants(p) {
                        accumulate(grads, p, g.slice_rows(offset, h));
                    }
                    offset += h;
                }
            }
            Op::GatherRows { x, idx } => {
                let (rows, cols) = val(*x).shape();
                let mut dx = Matrix::zeros(rows, cols);
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::MaskedSilu { x, mask, row_scale } => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let allow = mask.row(r);
                    let (gr, xr) = (g.row(r), xv.row(r));
                    for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                        if allow[j] {
                            *o = row_scale[r] * ops::silu_grad_scalar(xr[j]) * gr[j];
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::MaskedSoftmax { x, mask } => {
                let p = &node.value;
                let mut dx = Matrix::zeros(p.rows(), p.cols());
                for r in 0..p.rows() {
                    let (gr, pr) = (g.row(r), p.row(r));
                    let dot: T = gr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    let allow = mask.row(r);
                    for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
                        if allow[j] {
                            *o = pr[j] * (gr[j] - dot);
                        }
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::GatherScalars { table, idx } => {
                let mut dt = Matrix::zeros(1, val(*table).cols());
                for (k, i) in idx.iter().enumerate() {
                    if let Some(i) = i {
                        dt.data_mut()[*i] += g.data()[k];
                    }
                }
                accumulate(grads, *table, dt);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if self.wants(*a) {
                    let mut da = bv.clone();
                    for r in 0..da.rows() {
                        let s = g.data()[r];
                        da.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(grads, *a, da);
                }
                if self.wants(*b) {
                    let mut db = av.clone();
                    for r in 0..db.rows() {
                        let s = g.data()[r];
                        db.row_mut(r).iter_mut().for_each(|v| *v *= s);
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::ScaleRows(x, s) => {
                let (xv, sv) = (val(*x), val(*s));
                if self.wants(*x) {
                    let mut dx = g.clone();
                    for r in 0..dx.rows() {
                        let f = sv.data()[r];
                        dx.row_mut(r).iter_mut().for_each(|v| *v *= f);
                    }
                    accumulate(grads, *x, dx);
                }
                if self.wants(*s) {
                    let data = g
                        .iter_rows()
                        .zip(xv.iter_rows())
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(&a, &b)| a * b).sum())
                        .collect();
                    accumulate(grads, *s, Matrix::new(xv.rows(), 1, data)?);
                }
            }
            Op::SoftmaxXent { x, targets, probs } => {
                let scale = g.data()[0] / T::from_usize(targets.len()).unwrap();
                let mut dx = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    let row = dx.row_mut(r);
                    row[t] -= T::one();
                    row.iter_mut().for_each(|v| *v *= scale);
                }
                accumulate(grads, *x, dx);
            }
            Op::BceLogits { x, labels, weights } => {
                let xv = val(*x);
                let scale = g.data()[0] / T::from_usize(xv.rows()).unwrap();
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    let (xr, yr) = (xv.row(r), labels.row(r));
                    for (e, o) in dx.row_mut(r).iter_mut().enumerate() {
                        *o = scale * weights[e] * (ops::sigmoid(xr[e]) - yr[e]);
                    }
                }
                accumulate(grads, *x, dx);
            }
            Op::Sum(x) => {
                let (rows, cols) = val(*x).shape();
                accumulate(grads, *x, Matrix::filled(rows, cols, g.data()[0]));
            }
        }
        Ok(())
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Matrix<T>>], v: Var, g: Matrix<T>) {
    match &mut grads[v.0] {
        Some(existing) => {
            existing
                .add_assign(&g)
                .expect("gradient shapes agree with node shapes");
        }
        slot @ None => *slot = Some(g),
    }
}

/// Result of a reverse pass.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Matrix<T>>>,
    shapes: Vec<(usize, usize)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Matrix<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, zeros when nothing flowed into it.
    pub fn wrt(&self, v: Var) -> Matrix<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Matrix<T> {
        match self.grads[v.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}
