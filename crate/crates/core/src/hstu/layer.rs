//! Token-wise halves of a layer: everything before and after attention.
//!
//! Splitting a layer at the attention step lets full passes, cached
//! candidate scoring and incremental cache extension share one
//! implementation of the projections and the output transform.

use super::config::HstuConfig;
use super::params::{HstuLayer, LayerParams};
use crate::numeric::{FlopKind, Matrix, Scalar, Tape, Var};
use crate::Result;

/// Per-token projections feeding attention.
#[derive(Debug, Clone, Copy)]
pub struct Projected {
    /// Output gate (HSTU only).
    pub u: Option<Var>,
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

pub(crate) fn project<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &HstuConfig,
    layer: &LayerParams<Var>,
    x: Var,
) -> Result<Projected> {
    match layer {
        LayerParams::Hstu(p) => {
            let pre = tape.linear(x, p.w1, p.b1, FlopKind::Projection)?;
            let h = tape.silu(pre);
            let (vw, qw) = (cfg.v_width(), cfg.qk_width());
            Ok(Projected {
                u: Some(tape.slice_cols(h, 0, vw)),
                v: tape.slice_cols(h, vw, vw),
                q: tape.slice_cols(h, 2 * vw, qw),
                k: tape.slice_cols(h, 2 * vw + qw, qw),
            })
        }
        LayerParams::Transformer(p) => {
            let eps = T::of(cfg.eps);
            let hn = tape.layer_norm(x, eps);
            Ok(Projected {
                u: None,
                q: tape.linear(hn, p.wq, p.bq, FlopKind::Projection)?,
                k: tape.linear(hn, p.wk, p.bk, FlopKind::Projection)?,
                v: tape.linear(hn, p.wv, p.bv, FlopKind::Projection)?,
            })
        }
    }
}

/// Residual output transform given the pooled attention output `av`.
pub(crate) fn finish<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &HstuConfig,
    layer: &LayerParams<Var>,
    x: Var,
    proj: &Projected,
    av: Var,
) -> Result<Var> {
    let eps = T::of(cfg.eps);
    match layer {
        LayerParams::Hstu(p) => {
            let n = tape.layer_norm(av, eps);
            let gated = tape.mul(n, proj.u.expect("hstu projection has a gate"))?;
            let out = tape.linear(gated, p.w2, p.b2, FlopKind::Projection)?;
            tape.add(x, out)
        }
        LayerParams::Transformer(p) => {
            let a = tape.linear(av, p.wo, p.bo, FlopKind::Projection)?;
            let x1 = tape.add(x, a)?;
            let h = tape.layer_norm(x1, eps);
            let f = tape.linear(h, p.w_ff1, p.b_ff1, FlopKind::Projection)?;
            let f = tape.gelu(f);
            let f = tape.linear(f, p.w_ff2, p.b_ff2, FlopKind::Projection)?;
            tape.add(x1, f)
        }
    }
}

/// The fused input projection of an HSTU layer on plain matrices,
/// returned as `(U, V, Q, K)`.
pub fn pointwise_projection<T: Scalar>(
    cfg: &HstuConfig,
    layer: &HstuLayer<Matrix<T>>,
    x: &Matrix<T>,
) -> Result<(Matrix<T>, Matrix<T>, Matrix<T>, Matrix<T>)> {
    let mut tape = Tape::new();
    let bound = LayerParams::Hstu(layer.clone()).map(|m| tape.constant(m.clone()));
    let xv = tape.constant(x.clone());
    let p = project(&mut tape, cfg, &bound, xv)?;
    let u = p.u.expect("hstu projection has a gate");
    Ok((
        tape.value(u).clone(),
        tape.value(p.v).clone(),
        tape.value(p.q).clone(),
        tape.value(p.k).clone(),
    ))
}
