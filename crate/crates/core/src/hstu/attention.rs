//! Multi-head attention over one block of queries and keys.

use std::sync::Arc;

use super::config::{AttentionKind, HstuConfig, PointwiseNorm};
use super::rab::{rab_index, Coords};
use crate::numeric::{FlopKind, Mask, Matrix, Scalar, Tape, Var};
use crate::Result;

/// How weights are formed from scores.
#[derive(Debug, Clone)]
pub(crate) enum Weighting<T> {
    /// `row_scale[i] · silu(score)`
    Pointwise(Vec<T>),
    /// Scores are multiplied by `1/sqrt(d_qk)` before the masked softmax.
    Softmax,
}

pub(crate) struct HeadDims {
    pub heads: usize,
    pub d_qk: usize,
    pub d_v: usize,
}

impl HeadDims {
    pub fn of(cfg: &HstuConfig) -> Self {
        Self {
            heads: cfg.num_heads,
            d_qk: cfg.d_qk,
            d_v: cfg.d_v,
        }
    }
}

fn head(tape: &mut Tape<impl Scalar>, x: Var, h: usize, width: usize, heads: usize) -> Var {
    if heads == 1 {
        x
    } else {
        tape.slice_cols(x, h * width, width)
    }
}

/// Per-head `weights(QKᵀ + rab) · V`, heads concatenated along columns.
pub(crate) fn attend_heads<T: Scalar>(
    tape: &mut Tape<T>,
    dims: &HeadDims,
    q: Var,
    k: Var,
    v: Var,
    rab: Option<Var>,
    mask: &Arc<Mask>,
    weighting: &Weighting<T>,
) -> Result<Var> {
    let mut outs = Vec::with_capacity(dims.heads);
    for h in 0..dims.heads {
        let qh = head(tape, q, h, dims.d_qk, dims.heads);
        let kh = head(tape, k, h, dims.d_qk, dims.heads);
        let vh = head(tape, v, h, dims.d_v, dims.heads);
        let mut s = tape.matmul_bt(qh, kh, FlopKind::Attention)?;
        if let Weighting::Softmax = weighting {
            s = tape.scale(s, T::one() / T::from_usize(dims.d_qk).unwrap().sqrt());
        }
        if let Some(r) = rab {
            s = tape.add(s, r)?;
        }
        let w = match weighting {
            Weighting::Pointwise(scales) => tape.masked_silu(s, mask.clone(), scales.clone())?,
            Weighting::Softmax => tape.masked_softmax(s, mask.clone())?,
        };
        outs.push(tape.matmul(w, vh, FlopKind::Attention)?);
    }
    tape.concat_cols(&outs)
}

/// Row divisors for pointwise attention under `cfg.norm`.
pub(crate) fn row_scales<T: Scalar>(cfg: &HstuConfig, mask: &Mask) -> Vec<T> {
    (0..mask.rows())
        .map(|i| {
            let n = match cfg.norm {
                PointwiseNorm::MaxLen => cfg.max_seq_len as f64,
                PointwiseNorm::RowCount => mask.row_count(i).max(1) as f64,
                PointwiseNorm::Constant(c) => c,
            };
            T::of(1.0 / n)
        })
        .collect()
}

pub(crate) fn weighting<T: Scalar>(cfg: &HstuConfig, mask: &Mask) -> Weighting<T> {
    match cfg.attention_kind() {
        AttentionKind::Pointwise => Weighting::Pointwise(row_scales(cfg, mask)),
        AttentionKind::Softmax => Weighting::Softmax,
    }
}

/// Bias matrix for the block as a tape node, or `None` when bias is disabled.
pub(crate) fn rab_var<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &HstuConfig,
    tables: (Var, Var),
    qc: Coords,
    kc: Coords,
    mask: &Mask,
) -> Result<Option<Var>> {
    let idx = rab_index(&cfg.rab, qc, kc, mask);
    let (rows, cols) = (mask.rows(), mask.cols());
    let pos = match idx.pos {
        Some(i) => Some(tape.gather_scalars(tables.0, i, rows, cols)?),
        None => None,
    };
    let time = match idx.time {
        Some(i) => Some(tape.gather_scalars(tables.1, i, rows, cols)?),
        None => None,
    };
    Ok(match (pos, time) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (a, b) => a.or(b),
    })
}

/// Attention of queries `q` over keys `k`/values `v` under `mask`, with bias
/// looked up from the layer's tables at the given coordinates.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &HstuConfig,
    tables: (Var, Var),
    q: Var,
    k: Var,
    v: Var,
    qc: Coords,
    kc: Coords,
    mask: &Arc<Mask>,
) -> Result<Var> {
    let rab = rab_var(tape, cfg, tables, qc, kc, mask)?;
    let w = weighting(cfg, mask);
    attend_heads(tape, &HeadDims::of(cfg), q, k, v, rab, mask, &w)
}

/// Pointwise aggregated attention on plain matrices: per head,
/// `silu(QKᵀ + rab)/n_norm · V` at allowed entries.
pub fn pointwise_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    rab: Option<&Matrix<T>>,
    mask: &Mask,
    num_heads: usize,
    n_norm: f64,
) -> Result<Matrix<T>> {
    let w = Weighting::Pointwise(vec![T::of(1.0 / n_norm); mask.rows()]);
    run_constant(q, k, v, rab, mask, num_heads, &w)
}

/// Softmax attention with `1/sqrt(d_qk)` score scaling, on plain matrices.
pub fn softmax_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    rab: Option<&Matrix<T>>,
    mask: &Mask,
    num_heads: usize,
) -> Result<Matrix<T>> {
    run_constant(q, k, v, rab, mask, num_heads, &Weighting::Softmax)
}

fn run_constant<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    rab: Option<&Matrix<T>>,
    mask: &Mask,
    num_heads: usize,
    w: &Weighting<T>,
) -> Result<Matrix<T>> {
    if q.cols() % num_heads != 0 || v.cols() % num_heads != 0 || q.cols() != k.cols() {
        return Err(crate::Error::Shape {
            op: "attention",
            left: q.shape(),
            right: k.shape(),
        });
    }
    let mut tape = Tape::new();
    let dims = HeadDims {
        heads: num_heads,
        d_qk: q.cols() / num_heads,
        d_v: v.cols() / num_heads,
    };
    let (qv, kv, vv) = (
        tape.constant(q.clone()),
        tape.constant(k.clone()),
        tape.constant(v.clone()),
    );
    let rv = rab.map(|r| tape.constant(r.clone()));
    let out = attend_heads(&mut tape, &dims, qv, kv, vv, rv, &Arc::new(mask.clone()), w)?;
    Ok(tape.value(out).clone())
}
