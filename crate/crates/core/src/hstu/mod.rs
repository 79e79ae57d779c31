//! Sequential transduction layers: the HSTU block, its softmax ablation and
//! a pre-norm Transformer baseline, all over ragged batches.

mod activation;
mod attention;
mod config;
mod encoder;
mod layer;
mod params;
mod rab;

pub use activation::estimate_activation_floats;
pub use attention::{pointwise_attention, softmax_attention};
pub use config::{Arch, AttentionKind, HstuConfig, PointwiseNorm, RabConfig};
pub use encoder::{encode, forward_encoder, layer_forward, EncoderOutput, JaggedBatch, Layout, MaskKind};
pub use layer::{pointwise_projection, Projected};
pub use params::{layer_shapes, EncoderParams, HstuLayer, LayerParams, TransformerLayer};
pub use rab::{compute_rab, position_index, time_bucket, Coords};

pub(crate) use attention::{attend, rab_var, weighting, Weighting};
pub(crate) use layer::{finish, project};
