//! Scoring candidates for a user: naive per-candidate passes, microbatched
//! candidates, and key/value caches reused across requests.

use genrec::hstu::HstuConfig;
use genrec::mfalcon::{naive_score, synthetic_request, throughput_bench, CacheMode, Scorer};
use genrec::model::{Model, ModelConfig};
use genrec::sequence::{Task, Token};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> genrec::Result<()> {
    let cfg = ModelConfig {
        encoder: HstuConfig {
            d_model: 32,
            num_heads: 2,
            d_qk: 16,
            d_v: 16,
            max_seq_len: 256,
            ..HstuConfig::default()
        },
        task: Task::Ranking,
        item_rows: 1024,
        ..ModelConfig::default()
    };
    let model: Model<f64> = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;

    let mut req = synthetic_request(1000, 128, 16, 1);
    let naive = naive_score(&model, &req)?;
    let mut scorer = Scorer::new(&model, 8, CacheMode::Session)?;
    let out = scorer.score(&req)?;
    println!(
        "max diff vs naive {:.1e}; attention flops {} naive vs {} cached",
        out.probs.max_abs_diff(&naive.probs),
        naive.flops.attention,
        out.flops.attention
    );

    // the user engages with one more item; the cached prefix is extended
    let last = req.history.last().map(Token::ts).unwrap_or(0);
    req.history.push(Token::Combined { item: 7, actions: 1, ts: last + 30 });
    req.request_ts = last + 60;
    let out = scorer.score(&req)?;
    println!("second request: cache {:?}, {} sessions held", out.cache_event, scorer.session().len());

    for row in throughput_bench(&model, 128, 16, &[1, 16], 1, 2)? {
        println!(
            "{:>8} bm={:<2} {:>10.0} candidates/s, attention flops {}",
            row.method, row.bm, row.candidates_per_second, row.attention_flops
        );
    }
    Ok(())
}
