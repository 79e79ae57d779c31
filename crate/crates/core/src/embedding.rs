//! Hashed embedding tables with a rowwise AdamW optimizer.
//!
//! Ids are folded into a fixed number of rows by a multiplicative hash, so
//! an ever-growing id space maps onto bounded storage and collisions are
//! simply shared rows. The optimizer keeps a full first moment per row but a
//! single scalar second moment, `d + 1` state values per row instead of `2d`.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numeric::{Matrix, Scalar, Tape, Var};
use crate::{Error, Result};

pub const HASH_MULTIPLIER: u64 = 2_654_435_761;

const MAGIC: &[u8; 8] = b"HSTUEMB1";

/// `((id · 2654435761) mod 2³²) mod t`
pub fn hash_id(id: u64, t: usize) -> usize {
    assert!(t >= 1, "table needs at least one row");
    let folded = id.wrapping_mul(HASH_MULTIPLIER) & 0xffff_ffff;
    (folded % t as u64) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config("lr", "must be finite and non-negative"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        Ok(())
    }
}

/// Gradient rows keyed by table row; duplicate rows are summed on insert.
#[derive(Debug, Clone, Default)]
pub struct SparseRows<T: Scalar> {
    rows: BTreeMap<usize, Vec<T>>,
}

impl<T: Scalar> SparseRows<T> {
    pub fn new() -> Self {
        Self {
            rows: BTreeMap::new(),
        }
    }

    pub fn add(&mut self, row: usize, grad: &[T]) {
        match self.rows.get_mut(&row) {
            Some(acc) => {
                for (a, &g) in acc.iter_mut().zip(grad) {
                    *a += g;
                }
            }
            None => {
                self.rows.insert(row, grad.to_vec());
            }
        }
    }

    /// Row `i` of `grads` belongs to table row `rows[i]`.
    pub fn from_rows(rows: &[usize], grads: &Matrix<T>) -> Self {
        let mut out = Self::new();
        for (i, &r) in rows.iter().enumerate() {
            out.add(r, grads.row(i));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.rows.iter().map(|(&r, g)| (r, g.as_slice()))
    }
}

/// A subset of table rows placed on a tape as one differentiable leaf.
pub struct RowBinding {
    pub var: Var,
    pub rows: Vec<usize>,
    local: HashMap<usize, usize>,
}

impl RowBinding {
    /// Binding for a leaf whose rows are the given table rows, in order.
    pub fn new(var: Var, rows: Vec<usize>) -> Self {
        let local = rows.iter().enumerate().map(|(i, &r)| (r, i)).collect();
        Self { var, rows, local }
    }

    /// Position of a table row inside the bound leaf.
    pub fn local(&self, row: usize) -> usize {
        self.local[&row]
    }

    pub fn contains(&self, row: usize) -> bool {
        self.local.contains_key(&row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T: Scalar = f64> {
    weights: Matrix<T>,
    m: Matrix<T>,
    v: Vec<T>,
    step: u64,
    touched: Vec<usize>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn zeros(num_rows: usize, dim: usize) -> Self {
        assert!(num_rows >= 1, "table needs at least one row");
        Self::from_weights(Matrix::zeros(num_rows, dim))
    }

    /// Entries drawn from `N(0, std²)`.
    pub fn random(num_rows: usize, dim: usize, std: f64, rng: &mut impl Rng) -> Self {
        assert!(num_rows >= 1, "table needs at least one row");
        let normal = Normal::new(0.0, std).expect("std is finite and non-negative");
        let w = Matrix::from_fn(num_rows, dim, |_, _| T::of(normal.sample(rng)));
        Self::from_weights(w)
    }

    pub fn from_weights(weights: Matrix<T>) -> Self {
        let (t, d) = weights.shape();
        Self {
            weights,
            m: Matrix::zeros(t, d),
            v: vec![T::zero(); t],
            step: 0,
            touched: Vec::new(),
        }
    }

    pub fn num_rows(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Matrix<T> {
        &mut self.weights
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn row_of(&self, id: u64) -> usize {
        hash_id(id, self.num_rows())
    }

    pub fn rows_of(&self, ids: &[u64]) -> Vec<usize> {
        ids.iter().map(|&id| self.row_of(id)).collect()
    }

    pub fn row(&self, id: u64) -> &[T] {
        self.weights.row(self.row_of(id))
    }

    pub fn set_row(&mut self, id: u64, values: &[T]) {
        let r = self.row_of(id);
        self.weights.row_mut(r).copy_from_slice(values);
    }

    /// `len × d` rows for `ids`; the rows are remembered as touched.
    pub fn lookup(&mut self, ids: &[u64]) -> Matrix<T> {
        let rows = self.rows_of(ids);
        self.touched.extend_from_slice(&rows);
        self.weights.select_rows(&rows)
    }

    /// Rows touched by [`lookup`](Self::lookup) since the last call, sorted and deduplicated.
    pub fn take_touched(&mut self) -> Vec<usize> {
        let mut t = std::mem::take(&mut self.touched);
        t.sort_unstable();
        t.dedup();
        t
    }

    /// Places the given table rows on `tape` as a single leaf.
    pub fn bind(&self, tape: &mut Tape<T>, rows: impl IntoIterator<Item = usize>) -> RowBinding {
        let mut unique: Vec<usize> = rows.into_iter().collect();
        unique.sort_unstable();
        unique.dedup();
        let var = tape.leaf(self.weights.select_rows(&unique));
        RowBinding::new(var, unique)
    }

    /// Number of optimizer state scalars held (first moments plus second moments).
    pub fn optimizer_state_len(&self) -> usize {
        self.m.len() + self.v.len()
    }

    pub fn second_moment(&self, row: usize) -> T {
        self.v[row]
    }

    /// One rowwise AdamW update. Rows missing from `grads` stay unchanged.
    pub fn rowwise_adamw_step(&mut self, grads: &SparseRows<T>, cfg: &AdamWConfig) -> Result<()> {
        let d = self.dim();
        for (row, g) in grads.iter() {
            if row >= self.num_rows() || g.len() != d {
                return Err(Error::Invalid(format!(
                    "gradient for row {row} with {} columns does not fit a {}x{d} table",
                    g.len(),
                    self.num_rows()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("embedding gradient row {row}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let one = T::one();
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let lr = T::of(cfg.lr);
        let eps = T::of(cfg.eps);
        let wd = T::of(cfg.weight_decay);
        let dn = T::from_usize(d.max(1)).unwrap();

        for (row, g) in grads.iter() {
            let mean_sq = g.iter().map(|&x| x * x).sum::<T>() / dn;
            let v = b2 * self.v[row] + (one - b2) * mean_sq;
            self.v[row] = v;
            let denom = (v / c2).sqrt() + eps;
            let m = self.m.row_mut(row);
            let w = self.weights.row_mut(row);
            for k in 0..d {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                let m_hat = m[k] / c1;
                w[k] = w[k] - lr * (m_hat / denom + wd * w[k]);
            }
        }
        Ok(())
    }

    /// Binary layout: magic, `T` and `d` as little-endian u64, `T·d` f32
    /// weights, then the step count (u64), `T·d` f32 first moments and `T`
    /// f32 second moments.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.num_rows() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        write_f32s(w, self.weights.data())?;
        w.write_all(&self.step.to_le_bytes())?;
        write_f32s(w, self.m.data())?;
        write_f32s(w, &self.v)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("embedding table magic mismatch".into()));
        }
        let t = read_u64(r)? as usize;
        let d = read_u64(r)? as usize;
        if t == 0 || t.checked_mul(d).is_none() {
            return Err(Error::Checkpoint(format!("bad table shape {t}x{d}")));
        }
        let weights = Matrix::new(t, d, read_f32s(r, t * d)?)?;
        let step = read_u64(r)?;
        let m = Matrix::new(t, d, read_f32s(r, t * d)?)?;
        let v = read_f32s(r, t)?;
        Ok(Self {
            weights,
            m,
            v,
            step,
            touched: Vec::new(),
        })
    }
}

pub(crate) fn write_f32s<T: Scalar>(w: &mut impl Write, xs: &[T]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 4);
    for &x in xs {
        buf.extend_from_slice(&(x.f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

pub(crate) fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32s<T: Scalar>(r: &mut impl Read, n: usize) -> Result<Vec<T>> {
    let mut buf = vec![0u8; n * 4];
    read_exact(r, &mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| T::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
        .collect())
}
