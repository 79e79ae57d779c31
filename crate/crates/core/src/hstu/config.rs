use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    #[default]
    Hstu,
    /// Pre-norm softmax Transformer with a GELU feed-forward block of width `4d`.
    Transformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// `silu(QKᵀ + rab) / n_norm`, no softmax and no `1/sqrt(d_qk)`.
    #[default]
    Pointwise,
    /// `softmax(QKᵀ/sqrt(d_qk) + rab)` over unmasked keys.
    Softmax,
}

/// Divisor applied to pointwise attention weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PointwiseNorm {
    /// The configured maximum sequence length `N`.
    #[default]
    MaxLen,
    /// Number of keys the query row may attend to.
    RowCount,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RabConfig {
    pub positional: bool,
    pub temporal: bool,
    /// Relative offsets are clamped to `±(num_position_buckets − 1)`.
    pub num_position_buckets: usize,
    pub num_time_buckets: usize,
}

impl Default for RabConfig {
    fn default() -> Self {
        Self {
            positional: true,
            temporal: true,
            num_position_buckets: 128,
            num_time_buckets: 32,
        }
    }
}

impl RabConfig {
    pub fn disabled() -> Self {
        Self {
            positional: false,
            temporal: false,
            ..Self::default()
        }
    }

    pub fn position_table_len(&self) -> usize {
        2 * self.num_position_buckets - 1
    }

    pub fn any(&self) -> bool {
        self.positional || self.temporal
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HstuConfig {
    pub d_model: usize,
    pub num_heads: usize,
    pub d_qk: usize,
    pub d_v: usize,
    pub num_layers: usize,
    pub max_seq_len: usize,
    pub eps: f64,
    pub arch: Arch,
    /// Ignored by the Transformer, which always uses softmax.
    pub attention: AttentionKind,
    pub norm: PointwiseNorm,
    pub rab: RabConfig,
}

impl Default for HstuConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            num_heads: 2,
            d_qk: 32,
            d_v: 32,
            num_layers: 2,
            max_seq_len: 256,
            eps: 1e-6,
            arch: Arch::Hstu,
            attention: AttentionKind::Pointwise,
            norm: PointwiseNorm::MaxLen,
            rab: RabConfig::default(),
        }
    }
}

impl HstuConfig {
    /// Ranking preset: 3 layers, sequences of 2048, width 512.
    pub fn ranking_preset() -> Self {
        Self {
            d_model: 512,
            num_heads: 8,
            d_qk: 64,
            d_v: 64,
            num_layers: 3,
            max_seq_len: 2048,
            ..Self::default()
        }
    }

    /// Retrieval preset: 6 layers, sequences of 512, width 256.
    pub fn retrieval_preset() -> Self {
        Self {
            d_model: 256,
            num_heads: 4,
            d_qk: 64,
            d_v: 64,
            num_layers: 6,
            max_seq_len: 512,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("num_heads", self.num_heads),
            ("d_qk", self.d_qk),
            ("d_v", self.d_v),
            ("max_seq_len", self.max_seq_len),
            ("rab.num_position_buckets", self.rab.num_position_buckets),
            ("rab.num_time_buckets", self.rab.num_time_buckets),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::config("eps", "must be positive"));
        }
        if let PointwiseNorm::Constant(c) = self.norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("norm", "constant must be positive"));
            }
        }
        Ok(())
    }

    /// Effective attention kind for this architecture.
    pub fn attention_kind(&self) -> AttentionKind {
        match self.arch {
            Arch::Hstu => self.attention,
            Arch::Transformer => AttentionKind::Softmax,
        }
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn qk_width(&self) -> usize {
        self.num_heads * self.d_qk
    }

    pub fn v_width(&self) -> usize {
        self.num_heads * self.d_v
    }

    /// Output columns of the fused HSTU input projection.
    pub fn projection_width(&self) -> usize {
        2 * self.qk_width() + 2 * self.v_width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = HstuConfig {
            norm: PointwiseNorm::Constant(3.0),
            ..HstuConfig::default()
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<HstuConfig>(&s).unwrap(), cfg);
        assert!(serde_json::from_str::<HstuConfig>(r#"{"d_model": 8, "bogus": 1}"#).is_err());
        let partial: HstuConfig = serde_json::from_str(r#"{"d_model": 8}"#).unwrap();
        assert_eq!(partial.d_model, 8);
    }

    #[test]
    fn zero_counts_rejected() {
        let cfg = HstuConfig {
            num_heads: 0,
            ..HstuConfig::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("num_heads"));
    }

    #[test]
    fn widths() {
        let cfg = HstuConfig {
            d_model: 6,
            num_heads: 3,
            d_qk: 2,
            d_v: 5,
            ..HstuConfig::default()
        };
        assert_eq!(cfg.projection_width(), 2 * 3 * 2 + 2 * 3 * 5);
        assert_eq!(cfg.d_ff(), 24);
    }
}
