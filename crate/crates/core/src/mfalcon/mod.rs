//! Batched candidate scoring with modified masks and key/value caching.

mod bench;
mod cache;
mod mask;
mod score;

pub use bench::{synthetic_request, throughput_bench, write_bench_csv, BenchRow};
pub use cache::{hash_tokens, invalidate_or_reuse_cache, CacheEvent, KVCache, SessionCache};
pub use mask::build_mfalcon_mask;
pub use score::{
    batched_forward, cached_attention_flops, mfalcon_score, naive_score, score_with_cache, CacheMode, ScoreOutput,
    ScoreRequest, Scorer,
};
