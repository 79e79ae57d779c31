//! Wall-clock comparison of candidate scoring strategies.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::score::{mfalcon_score, naive_score, CacheMode, ScoreOutput, ScoreRequest};
use crate::model::Model;
use crate::numeric::Scalar;
use crate::sequence::Token;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// `naive` (one causal pass per candidate), `batched` (one pass over all
    /// candidates, no cache) or `cached` (microbatches of `bm` over a request cache).
    pub method: String,
    pub n: usize,
    pub m: usize,
    pub bm: usize,
    pub reps: usize,
    pub median_seconds: f64,
    pub flops: u64,
    pub attention_flops: u64,
    pub candidates_per_second: f64,
}

/// A random request with `n` history tokens and `m` candidates.
pub fn synthetic_request(model_items: u64, n: usize, m: usize, seed: u64) -> ScoreRequest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let history = (0..n)
        .map(|i| Token::Combined {
            item: rng.random_range(0..model_items),
            actions: 1,
            ts: i as i64,
        })
        .collect();
    ScoreRequest {
        user_id: 0,
        history,
        candidates: (0..m).map(|_| rng.random_range(0..model_items)).collect(),
        request_ts: n as i64,
    }
}

fn timed<T: Scalar>(
    reps: usize,
    mut f: impl FnMut() -> Result<ScoreOutput<T>>,
) -> Result<(f64, ScoreOutput<T>)> {
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps {
        let t = Instant::now();
        last = Some(f()?);
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok((times[reps / 2], last.expect("reps > 0")))
}

/// For each `bm` in `bm_grid`, one row per method: naive scoring, a single
/// batched pass and cached microbatches of `bm`. The first two do not depend
/// on `bm` and are measured once. Zero repetitions give an empty table.
pub fn throughput_bench<T: Scalar>(
    model: &Model<T>,
    n: usize,
    m: usize,
    bm_grid: &[usize],
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    if reps == 0 {
        return Ok(Vec::new());
    }
    if m == 0 || bm_grid.contains(&0) {
        return Err(Error::config("bm", "candidate and microbatch counts must be positive"));
    }
    let req = synthetic_request(model.cfg.item_rows as u64, n, m, seed);
    let row = |method: &str, bm: usize, secs: f64, out: &ScoreOutput<T>| BenchRow {
        method: method.to_string(),
        n,
        m,
        bm,
        reps,
        median_seconds: secs,
        flops: out.flops.total(),
        attention_flops: out.flops.attention,
        candidates_per_second: m as f64 / secs.max(1e-12),
    };
    let (naive_secs, naive) = timed(reps, || naive_score(model, &req))?;
    let (batched_secs, batched) = timed(reps, || mfalcon_score(model, &req, m, CacheMode::Off))?;
    let mut rows = Vec::new();
    for &bm in bm_grid {
        let (secs, out) = timed(reps, || mfalcon_score(model, &req, bm, CacheMode::Request))?;
        rows.push(row("naive", bm, naive_secs, &naive));
        rows.push(row("batched", bm, batched_secs, &batched));
        rows.push(row("cached", bm, secs, &out));
    }
    Ok(rows)
}

pub fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "method,n,m,bm,reps,median_seconds,flops,attention_flops,candidates_per_second").map_err(io)?;
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{},{:.6e},{},{},{:.3}",
            r.method, r.n, r.m, r.bm, r.reps, r.median_seconds, r.flops, r.attention_flops, r.candidates_per_second
        )
        .map_err(io)?;
    }
    f.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hstu::HstuConfig;
    use crate::model::ModelConfig;

    fn tiny() -> Model<f32> {
        let cfg = ModelConfig {
            encoder: HstuConfig {
                d_model: 8,
                num_heads: 1,
                d_qk: 8,
                d_v: 8,
                num_layers: 1,
                max_seq_len: 64,
                ..HstuConfig::default()
            },
            item_rows: 64,
            ..ModelConfig::default()
        };
        Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn table_shape_and_csv() {
        let m = tiny();
        assert!(throughput_bench(&m, 8, 4, &[1, 4], 0, 0).unwrap().is_empty());
        let rows = throughput_bench(&m, 8, 4, &[1, 4], 3, 0).unwrap();
        let methods: Vec<_> = rows.iter().map(|r| (r.method.as_str(), r.bm)).collect();
        assert_eq!(
            methods,
            [("naive", 1), ("batched", 1), ("cached", 1), ("naive", 4), ("batched", 4), ("cached", 4)]
        );
        assert!(rows[0].attention_flops > rows[1].attention_flops);
        assert!(rows[2].flops < rows[1].flops);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        write_bench_csv(&p, &rows).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 7);
        assert!(text.starts_with("method,n,m,bm"));
    }
}
