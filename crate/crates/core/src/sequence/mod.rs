//! From raw event logs to supervised token sequences.

mod events;
mod loaders;
mod sampler;
mod sequentialize;
mod tokens;

pub use events::{Context, Event, EventKind};
pub use loaders::{read_events_jsonl, read_movielens, write_events_jsonl, LIKED, LIKE_THRESHOLD, RATED};
pub use sampler::{count_training_flops, generative_emission_sampler, TrainingMode};
pub use sequentialize::{sequentialize, sequentialize_users};
pub use tokens::{
    build_next_content_sequence, build_ranking_sequence, build_retrieval_sequence, build_sequence,
    deinterleave_ranking, split_history, ContextToken, Target, Task, Token, TokenKind,
    TokenSequence,
};
