//! Reference implementations of the training losses on plain values.

use crate::embedding::EmbeddingTable;
use crate::numeric::ops::{log_sum_exp, softplus};
use crate::{Error, Result};

/// `−ln(e^{u·e⁺} / (e^{u·e⁺} + Σ e^{u·e⁻}))` over raw dot-product logits.
pub fn sampled_softmax_loss(
    u: &[f64],
    positive: u64,
    negatives: &[u64],
    table: &EmbeddingTable<f64>,
) -> Result<f64> {
    if negatives.is_empty() {
        return Err(Error::Invalid("sampled softmax needs at least one negative".into()));
    }
    if u.len() != table.dim() {
        return Err(Error::Shape {
            op: "sampled_softmax_loss",
            left: (1, u.len()),
            right: (1, table.dim()),
        });
    }
    let pos_row = table.row_of(positive);
    if negatives.iter().any(|&n| table.row_of(n) == pos_row) {
        return Err(Error::Invalid(format!("negative collides with positive {positive}")));
    }
    let dot = |id: u64| table.row(id).iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
    let neg: Vec<f64> = negatives.iter().map(|&n| dot(n)).collect();
    Ok(sampled_softmax_from_logits(dot(positive), &neg))
}

pub fn sampled_softmax_from_logits(positive: f64, negatives: &[f64]) -> f64 {
    log_sum_exp(std::iter::once(positive).chain(negatives.iter().copied())) - positive
}

/// `Σ_e w_e · BCE(σ(logit_e), label_e)` for one position.
pub fn multitask_bce_loss(logits: &[f64], labels: u32, weights: &[f64]) -> Result<f64> {
    if logits.len() != weights.len() {
        return Err(Error::Shape {
            op: "multitask_bce_loss",
            left: (1, logits.len()),
            right: (1, weights.len()),
        });
    }
    if weights.iter().any(|&w| w < 0.0) {
        return Err(Error::Invalid("task weights must be non-negative".into()));
    }
    Ok(logits
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(e, (&z, &w))| {
            let y = (labels >> e & 1) as f64;
            w * (softplus(z) - y * z)
        })
        .sum())
}
