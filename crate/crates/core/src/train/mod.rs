//! Losses, metrics, optimizers and the training and evaluation loops.

mod data;
mod eval;
mod losses;
mod metrics;
mod optim;
mod trainer;

pub use data::Dataset;
pub use eval::{evaluate, EvalConfig, EvalTargets};
pub use losses::{multitask_bce_loss, sampled_softmax_from_logits, sampled_softmax_loss};
pub use metrics::{hr_ndcg, log_perplexity, normalized_entropy, rank_metrics, rank_of, MetricReport, RankAccumulator};
pub use optim::DenseAdamW;
pub use trainer::{train, truncate, write_timeline_csv, TimelinePoint, TrainConfig, TrainSummary, Trainer};
