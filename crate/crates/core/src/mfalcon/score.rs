//! Scoring many candidates against one history.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cache::{CacheEvent, KVCache, SessionCache};
use crate::hstu::{finish, forward_encoder, project, rab_var, weighting, Coords, Layout, MaskKind, Weighting};
use crate::model::Model;
use crate::numeric::{FlopCounter, FlopKind, Mask, Matrix, Scalar, Tape, Var};
use crate::sequence::Token;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheMode {
    /// Every microbatch recomputes the history.
    Off,
    /// The history is encoded once per request.
    #[default]
    Request,
    /// Caches live across requests of the same user.
    Session,
}

impl FromStr for CacheMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Self::Off),
            "request" => Ok(Self::Request),
            "session" => Ok(Self::Session),
            _ => Err(Error::config("cache", format!("unknown cache mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub user_id: u64,
    pub history: Vec<Token>,
    pub candidates: Vec<u64>,
    /// Timestamp given to every candidate token.
    pub request_ts: i64,
}

impl ScoreRequest {
    pub fn candidate_tokens(&self) -> Vec<Token> {
        self.candidates
            .iter()
            .map(|&item| Token::Content {
                item,
                ts: self.request_ts,
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ScoreOutput<T: Scalar> {
    /// Encoder output at each candidate, `m × d`.
    pub embeddings: Matrix<T>,
    /// Per-action probabilities, `m × A`.
    pub probs: Matrix<T>,
    pub flops: FlopCounter,
    /// Set when a cache was consulted.
    pub cache_event: Option<CacheEvent>,
}

/// One causal pass over `history ++ [candidate]` per candidate.
pub fn naive_score<T: Scalar>(model: &Model<T>, req: &ScoreRequest) -> Result<ScoreOutput<T>> {
    let mut rows = Vec::with_capacity(req.candidates.len());
    let mut flops = FlopCounter::default();
    for cand in req.candidate_tokens() {
        let mut tokens = req.history.clone();
        tokens.push(cand);
        let (y, f) = forward_tokens(model, &tokens, &MaskKind::Causal)?;
        rows.push(y.slice_rows(tokens.len() - 1, 1));
        flops = flops + f;
    }
    let d = model.cfg.encoder.d_model;
    let embeddings = if rows.is_empty() {
        Matrix::zeros(0, d)
    } else {
        Matrix::vcat(&rows.iter().collect::<Vec<_>>())?
    };
    finish_output(model, embeddings, flops, None)
}

/// Full pass over `history ++ candidates` with the candidate-isolating mask.
pub fn batched_forward<T: Scalar>(
    model: &Model<T>,
    history: &[Token],
    candidates: &[Token],
) -> Result<(Matrix<T>, FlopCounter)> {
    let n = history.len();
    let bm = candidates.len();
    let mut tokens = history.to_vec();
    tokens.extend_from_slice(candidates);
    let (y, f) = forward_tokens(model, &tokens, &MaskKind::MFalcon { prefix: n, bm })?;
    Ok((y.slice_rows(n, bm), f))
}

fn forward_tokens<T: Scalar>(model: &Model<T>, tokens: &[Token], kind: &MaskKind) -> Result<(Matrix<T>, FlopCounter)> {
    let mut tape = Tape::new();
    let bound = model.bind_tokens(&mut tape, tokens)?;
    let x = model.embed_tokens(&mut tape, &bound, tokens)?;
    let ts = tokens.iter().map(Token::ts).collect();
    let layout = Layout::new(vec![0, tokens.len()], ts, kind)?;
    let out = forward_encoder(&mut tape, &model.cfg.encoder, &bound.dense.encoder, x, &layout)?;
    Ok((tape.value(out.y).clone(), tape.flops()))
}

fn head_of(tape: &mut Tape<impl Scalar>, x: Var, h: usize, width: usize, heads: usize) -> Var {
    if heads == 1 {
        x
    } else {
        tape.slice_cols(x, h * width, width)
    }
}

/// Candidates scored against cached history keys and values. Each candidate
/// sees the whole history and itself, so its scores are the history block
/// `q·Kᵀ` next to the single self term `q·k`.
pub fn score_with_cache<T: Scalar>(
    model: &Model<T>,
    cache: &KVCache<T>,
    candidates: &[Token],
) -> Result<(Matrix<T>, FlopCounter)> {
    let cfg = &model.cfg.encoder;
    let b = candidates.len();
    let d = cfg.d_model;
    if b == 0 {
        return Ok((Matrix::zeros(0, d), FlopCounter::default()));
    }
    let request_ts = candidates[0].ts();
    if candidates.iter().any(|c| c.ts() != request_ts) {
        return Err(Error::Invalid("candidates of one request share a timestamp".into()));
    }
    let n = cache.prefix_len();
    let mut tape = Tape::new();
    let bound = model.bind_tokens(&mut tape, candidates)?;
    let mut x = model.embed_tokens(&mut tape, &bound, candidates)?;

    let q_pos = vec![n; b];
    let q_ts = vec![request_ts; b];
    let k_pos: Vec<usize> = (0..=n).collect();
    let mut k_ts = cache.timestamps();
    k_ts.push(request_ts);
    let qc = Coords {
        positions: &q_pos,
        timestamps: &q_ts,
    };
    let kc = Coords {
        positions: &k_pos,
        timestamps: &k_ts,
    };
    let mask = Arc::new(Mask::full(b, n + 1));
    let w_kind: Weighting<T> = weighting(cfg, &mask);
    let (heads, dqk, dv) = (cfg.num_heads, cfg.d_qk, cfg.d_v);

    for (l, layer) in bound.dense.encoder.layers.iter().enumerate() {
        let tables = {
            let (p, t) = layer.rab_tables();
            (*p, *t)
        };
        let proj = project(&mut tape, cfg, layer, x)?;
        let kc_var = tape.constant(cache.keys[l].clone());
        let vc_var = tape.constant(cache.values[l].clone());
        let rab = rab_var(&mut tape, cfg, tables, qc, kc, &mask)?;
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = head_of(&mut tape, proj.q, h, dqk, heads);
            let ksh = head_of(&mut tape, proj.k, h, dqk, heads);
            let vsh = head_of(&mut tape, proj.v, h, dv, heads);
            let kch = head_of(&mut tape, kc_var, h, dqk, heads);
            let vch = head_of(&mut tape, vc_var, h, dv, heads);
            let s_hist = tape.matmul_bt(qh, kch, FlopKind::Attention)?;
            let s_self = tape.row_dot(qh, ksh, FlopKind::Attention)?;
            let mut s = tape.concat_cols(&[s_hist, s_self])?;
            if let Weighting::Softmax = w_kind {
                s = tape.scale(s, T::one() / T::from_usize(dqk).unwrap().sqrt());
            }
            if let Some(r) = rab {
                s = tape.add(s, r)?;
            }
            let w = match &w_kind {
                Weighting::Pointwise(scales) => tape.masked_silu(s, mask.clone(), scales.clone())?,
                Weighting::Softmax => tape.masked_softmax(s, mask.clone())?,
            };
            let w_hist = tape.slice_cols(w, 0, n);
            let w_self = tape.slice_cols(w, n, 1);
            let from_hist = tape.matmul(w_hist, vch, FlopKind::Attention)?;
            let from_self = tape.scale_rows(vsh, w_self, FlopKind::Attention)?;
            outs.push(tape.add(from_hist, from_self)?);
        }
        let av = tape.concat_cols(&outs)?;
        x = finish(&mut tape, cfg, layer, x, &proj, av)?;
    }
    Ok((tape.value(x).clone(), tape.flops()))
}

/// Attention flops of [`score_with_cache`] for `b` candidates over a prefix of `n`.
pub fn cached_attention_flops(model_cfg: &crate::hstu::HstuConfig, n: usize, b: usize) -> u64 {
    let per_layer = 2 * b * (n + 1) * (model_cfg.d_qk + model_cfg.d_v) * model_cfg.num_heads;
    (per_layer * model_cfg.num_layers) as u64
}

fn finish_output<T: Scalar>(
    model: &Model<T>,
    embeddings: Matrix<T>,
    flops: FlopCounter,
    cache_event: Option<CacheEvent>,
) -> Result<ScoreOutput<T>> {
    let probs = if embeddings.rows() == 0 {
        Matrix::zeros(0, model.cfg.num_actions)
    } else {
        model.action_probs(&embeddings)?
    };
    Ok(ScoreOutput {
        embeddings,
        probs,
        flops,
        cache_event,
    })
}

/// Microbatched candidate scoring with an optional cache that persists
/// across requests.
pub struct Scorer<'a, T: Scalar> {
    pub model: &'a Model<T>,
    pub bm: usize,
    pub mode: CacheMode,
    session: SessionCache<T>,
}

impl<'a, T: Scalar> Scorer<'a, T> {
    pub fn new(model: &'a Model<T>, bm: usize, mode: CacheMode) -> Result<Self> {
        if bm == 0 {
            return Err(Error::config("bm", "microbatch size must be positive"));
        }
        Ok(Self {
            model,
            bm,
            mode,
            session: SessionCache::new(),
        })
    }

    pub fn session(&self) -> &SessionCache<T> {
        &self.session
    }

    pub fn score(&mut self, req: &ScoreRequest) -> Result<ScoreOutput<T>> {
        let cands = req.candidate_tokens();
        let mut flops = FlopCounter::default();
        let mut parts = Vec::new();
        let mut event = None;
        match self.mode {
            CacheMode::Off => {
                for chunk in cands.chunks(self.bm) {
                    let (y, f) = batched_forward(self.model, &req.history, chunk)?;
                    parts.push(y);
                    flops = flops + f;
                }
            }
            CacheMode::Request | CacheMode::Session => {
                let owned;
                let cache = if self.mode == CacheMode::Request {
                    let (c, f) = KVCache::build(self.model, &req.history)?;
                    flops = flops + f;
                    event = Some(CacheEvent::Built);
                    owned = c;
                    &owned
                } else {
                    let (c, e, f) = self.session.update(self.model, req.user_id, &req.history)?;
                    flops = flops + f;
                    event = Some(e);
                    c
                };
                for chunk in cands.chunks(self.bm) {
                    let (y, f) = score_with_cache(self.model, cache, chunk)?;
                    parts.push(y);
                    flops = flops + f;
                }
            }
        }
        let embeddings = if parts.is_empty() {
            Matrix::zeros(0, self.model.cfg.encoder.d_model)
        } else {
            Matrix::vcat(&parts.iter().collect::<Vec<_>>())?
        };
        finish_output(self.model, embeddings, flops, event)
    }
}

/// Scores `req` once with a fresh scorer.
pub fn mfalcon_score<T: Scalar>(model: &Model<T>, req: &ScoreRequest, bm: usize, mode: CacheMode) -> Result<ScoreOutput<T>> {
    Scorer::new(model, bm, mode)?.score(req)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hstu::{Arch, AttentionKind, HstuConfig, PointwiseNorm, RabConfig};
    use crate::model::ModelConfig;
    use crate::numeric::Tape;
    use crate::sequence::Task;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(arch: Arch, attention: AttentionKind, norm: PointwiseNorm, seed: u64) -> Model<f64> {
        let cfg = ModelConfig {
            encoder: HstuConfig {
                arch,
                attention,
                d_model: 8,
                num_layers: 2,
                num_heads: 2,
                d_qk: 4,
                d_v: 4,
                max_seq_len: 64,
                norm,
                rab: RabConfig {
                    positional: true,
                    temporal: true,
                    num_position_buckets: 64,
                    num_time_buckets: 16,
                },
                ..HstuConfig::default()
            },
            task: Task::Ranking,
            item_rows: 128,
            context_rows: 8,
            num_actions: 2,
            embedding_std: 0.5,
            ..ModelConfig::default()
        };
        Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn request(user: u64, n: usize, m: usize, seed: u64) -> ScoreRequest {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let history = (0..n)
            .map(|i| Token::Combined {
                item: rng.random_range(0..100),
                actions: rng.random_range(0..4),
                ts: 1000 + 37 * i as i64,
            })
            .collect();
        ScoreRequest {
            user_id: user,
            history,
            candidates: (0..m).map(|_| rng.random_range(0..100)).collect(),
            request_ts: 1000 + 37 * n as i64 + 500,
        }
    }

    fn archs() -> Vec<(Arch, AttentionKind, PointwiseNorm)> {
        vec![
            (Arch::Hstu, AttentionKind::Pointwise, PointwiseNorm::MaxLen),
            (Arch::Hstu, AttentionKind::Pointwise, PointwiseNorm::RowCount),
            (Arch::Hstu, AttentionKind::Softmax, PointwiseNorm::MaxLen),
            (Arch::Transformer, AttentionKind::Softmax, PointwiseNorm::MaxLen),
        ]
    }

    #[test]
    fn all_modes_match_naive() {
        for (a, (arch, att, norm)) in archs().into_iter().enumerate() {
            let m = model(arch, att, norm, a as u64);
            let req = request(7, 11, 16, a as u64 + 10);
            let naive = naive_score(&m, &req).unwrap();
            for bm in [1, 2, 4, 8, 16] {
                for mode in [CacheMode::Off, CacheMode::Request, CacheMode::Session] {
                    let out = mfalcon_score(&m, &req, bm, mode).unwrap();
                    let diff = out.embeddings.max_abs_diff(&naive.embeddings);
                    assert!(diff < 1e-9, "{arch:?} bm={bm} {mode:?}: {diff}");
                    assert!(out.probs.max_abs_diff(&naive.probs) < 1e-9);
                }
            }
        }
    }

    #[test]
    fn candidate_order_and_isolation() {
        let m = model(Arch::Hstu, AttentionKind::Pointwise, PointwiseNorm::MaxLen, 3);
        let req = request(1, 9, 8, 4);
        let base = mfalcon_score(&m, &req, 8, CacheMode::Off).unwrap();
        let mut rev = req.clone();
        rev.candidates.reverse();
        let out = mfalcon_score(&m, &rev, 8, CacheMode::Off).unwrap();
        for i in 0..8 {
            for j in 0..8 {
                assert!((base.embeddings.get(i, j) - out.embeddings.get(7 - i, j)).abs() < 1e-12);
            }
        }
        // changing one candidate leaves the others untouched
        let mut other = req.clone();
        other.candidates[3] = (req.candidates[3] + 1) % 100;
        let out = mfalcon_score(&m, &other, 8, CacheMode::Off).unwrap();
        for i in (0..8).filter(|&i| i != 3) {
            assert_eq!(out.embeddings.row(i), base.embeddings.row(i));
        }
    }

    #[test]
    fn cache_equals_prefix_forward() {
        for (a, (arch, att, norm)) in archs().into_iter().enumerate() {
            let m = model(arch, att, norm, 20 + a as u64);
            let req = request(2, 13, 0, 5);
            let (cache, _) = KVCache::build(&m, &req.history).unwrap();
            let mut tape = Tape::new();
            let bound = m.bind_tokens(&mut tape, &req.history).unwrap();
            let x = m.embed_tokens(&mut tape, &bound, &req.history).unwrap();
            let ts = req.history.iter().map(Token::ts).collect();
            let layout = Layout::new(vec![0, 13], ts, &MaskKind::Causal).unwrap();
            let out = forward_encoder(&mut tape, &m.cfg.encoder, &bound.dense.encoder, x, &layout).unwrap();
            for l in 0..2 {
                assert_eq!(&cache.keys[l], tape.value(out.keys[l]), "{arch:?}");
                assert_eq!(&cache.values[l], tape.value(out.values[l]), "{arch:?}");
            }
        }
    }

    #[test]
    fn extension_matches_rebuild() {
        let m = model(Arch::Hstu, AttentionKind::Pointwise, PointwiseNorm::RowCount, 9);
        let req = request(3, 15, 0, 6);
        let (full, _) = KVCache::build(&m, &req.history).unwrap();
        let (mut part, _) = KVCache::build(&m, &req.history[..10]).unwrap();
        part.extend(&m, &req.history[10..]).unwrap();
        assert_eq!(part.tokens, full.tokens);
        for l in 0..2 {
            assert!(part.keys[l].max_abs_diff(&full.keys[l]) < 1e-12);
            assert!(part.values[l].max_abs_diff(&full.values[l]) < 1e-12);
        }
    }

    #[test]
    fn session_events() {
        let m = model(Arch::Hstu, AttentionKind::Pointwise, PointwiseNorm::MaxLen, 11);
        let mut scorer = Scorer::new(&m, 4, CacheMode::Session).unwrap();
        let req = request(5, 10, 6, 7);
        assert_eq!(scorer.score(&req).unwrap().cache_event, Some(CacheEvent::Built));
        assert_eq!(scorer.score(&req).unwrap().cache_event, Some(CacheEvent::Reused));

        let mut longer = request(5, 13, 6, 7);
        longer.history[..10].copy_from_slice(&req.history);
        let out = scorer.score(&longer).unwrap();
        assert_eq!(out.cache_event, Some(CacheEvent::Extended(3)));
        let naive = naive_score(&m, &longer).unwrap();
        assert!(out.embeddings.max_abs_diff(&naive.embeddings) < 1e-9);

        let mut edited = longer.clone();
        edited.history[2] = Token::Combined { item: 99, actions: 1, ts: 1074 };
        let out = scorer.score(&edited).unwrap();
        assert_eq!(out.cache_event, Some(CacheEvent::Recomputed));
        let naive = naive_score(&m, &edited).unwrap();
        assert!(out.embeddings.max_abs_diff(&naive.embeddings) < 1e-9);

        // another user gets a separate entry
        scorer.score(&request(6, 4, 2, 8)).unwrap();
        assert_eq!(scorer.session().len(), 2);
    }

    #[test]
    fn cached_attention_flops_are_exact() {
        let m = model(Arch::Hstu, AttentionKind::Pointwise, PointwiseNorm::MaxLen, 12);
        for (n, b) in [(0, 3), (1, 1), (17, 5), (40, 16)] {
            let req = request(1, n, b, 13);
            let (cache, _) = KVCache::build(&m, &req.history).unwrap();
            let (_, f) = score_with_cache(&m, &cache, &req.candidate_tokens()).unwrap();
            assert_eq!(f.attention, cached_attention_flops(&m.cfg.encoder, n, b));
            // 2·b·(n+1)·(d_qk+d_v)·h per layer, written out
            assert_eq!(f.attention, (2 * 2 * b * (n + 1) * 8 * 2) as u64);
        }
    }

    #[test]
    fn bad_inputs() {
        let m = model(Arch::Hstu, AttentionKind::Pointwise, PointwiseNorm::MaxLen, 1);
        assert!(Scorer::new(&m, 0, CacheMode::Off).is_err());
        assert!("bogus".parse::<CacheMode>().is_err());
        assert_eq!("session".parse::<CacheMode>().unwrap(), CacheMode::Session);
        let out = mfalcon_score(&m, &request(1, 5, 0, 1), 4, CacheMode::Request).unwrap();
        assert_eq!(out.probs.shape(), (0, 2));
    }
}
