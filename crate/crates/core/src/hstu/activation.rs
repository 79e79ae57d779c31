//! Activation memory per token per layer, counted in floats.

use super::config::{Arch, HstuConfig};

/// Saved activations per token per layer for `cfg.arch`.
///
/// HSTU keeps its input and the layer-norm input/output (`2d + 2d`), the
/// projected U, V, Q, K before and after SiLU (`4h·d_qk + 4h·d_v`) and the
/// pooled attention output with its gated form (`2h·d_v`).
///
/// The Transformer keeps the pooled output, its normalized form and the
/// output projection (`3h·d_v`), the attention block's input and layer norm
/// (`2d`), the feed-forward hidden layer before and after GELU (`4d_ff`), the
/// feed-forward input and layer norm (`2d`), the residual sum (`d`), the
/// output of the second feed-forward matrix with its dropout mask (`4d`
/// counting the mask at full width for both residual branches) and the
/// Q, K, V projections with their bias-free intermediates
/// (`2h·d_qk + 2h·d_qk + h·d_v`).
pub fn estimate_activation_floats(cfg: &HstuConfig) -> usize {
    let d = cfg.d_model;
    let qk = cfg.qk_width();
    let v = cfg.v_width();
    match cfg.arch {
        Arch::Hstu => 2 * d + 2 * d + 4 * qk + 4 * v + 2 * v,
        Arch::Transformer => {
            let qkv = 2 * qk + 2 * qk + v;
            3 * v + 2 * d + 4 * cfg.d_ff() + 2 * d + d + 4 * d + qkv
        }
    }
}
