//! Per-layer key/value caches for a user's history and their reuse across requests.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::hstu::{attend, finish, project, Coords};
use crate::model::Model;
use crate::numeric::{FlopCounter, Mask, Matrix, Scalar, Tape};
use crate::sequence::Token;
use crate::Result;

/// Keys and values of every layer for a run of history tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct KVCache<T: Scalar> {
    pub tokens: Vec<Token>,
    /// Per layer, `n × h·d_qk`.
    pub keys: Vec<Matrix<T>>,
    /// Per layer, `n × h·d_v`.
    pub values: Vec<Matrix<T>>,
}

impl<T: Scalar> KVCache<T> {
    pub fn empty(model: &Model<T>) -> Self {
        let cfg = &model.cfg.encoder;
        Self {
            tokens: Vec::new(),
            keys: vec![Matrix::zeros(0, cfg.qk_width()); cfg.num_layers],
            values: vec![Matrix::zeros(0, cfg.v_width()); cfg.num_layers],
        }
    }

    /// Cache for `tokens` computed from scratch.
    pub fn build(model: &Model<T>, tokens: &[Token]) -> Result<(Self, FlopCounter)> {
        let mut c = Self::empty(model);
        let flops = c.extend(model, tokens)?;
        Ok((c, flops))
    }

    pub fn prefix_len(&self) -> usize {
        self.tokens.len()
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.tokens.iter().map(Token::ts).collect()
    }

    pub fn prefix_hash(&self) -> u64 {
        hash_tokens(&self.tokens)
    }

    /// Appends `new` tokens: each attends causally to the cached prefix and
    /// to the new tokens before it.
    pub fn extend(&mut self, model: &Model<T>, new: &[Token]) -> Result<FlopCounter> {
        if new.is_empty() {
            return Ok(FlopCounter::default());
        }
        let cfg = &model.cfg.encoder;
        let n = self.prefix_len();
        let k = new.len();
        let mut tape = Tape::new();
        let bound = model.bind_tokens(&mut tape, new)?;
        let mut x = model.embed_tokens(&mut tape, &bound, new)?;

        let q_pos: Vec<usize> = (n..n + k).collect();
        let q_ts: Vec<i64> = new.iter().map(Token::ts).collect();
        let k_pos: Vec<usize> = (0..n + k).collect();
        let mut k_ts = self.timestamps();
        k_ts.extend_from_slice(&q_ts);
        let qc = Coords {
            positions: &q_pos,
            timestamps: &q_ts,
        };
        let kc = Coords {
            positions: &k_pos,
            timestamps: &k_ts,
        };
        let mask = Arc::new(Mask::from_fn(k, n + k, |i, j| j <= n + i));

        for (l, layer) in bound.dense.encoder.layers.iter().enumerate() {
            let tables = {
                let (p, t) = layer.rab_tables();
                (*p, *t)
            };
            let proj = project(&mut tape, cfg, layer, x)?;
            let kc_var = tape.constant(self.keys[l].clone());
            let vc_var = tape.constant(self.values[l].clone());
            let keys = tape.concat_rows(&[kc_var, proj.k])?;
            let values = tape.concat_rows(&[vc_var, proj.v])?;
            let av = attend(&mut tape, cfg, tables, proj.q, keys, values, qc, kc, &mask)?;
            x = finish(&mut tape, cfg, layer, x, &proj, av)?;
            self.keys[l] = Matrix::vcat(&[&self.keys[l], tape.value(proj.k)])?;
            self.values[l] = Matrix::vcat(&[&self.values[l], tape.value(proj.v)])?;
        }
        self.tokens.extend_from_slice(new);
        Ok(tape.flops())
    }
}

pub fn hash_tokens(tokens: &[Token]) -> u64 {
    let mut h = DefaultHasher::new();
    tokens.hash(&mut h);
    h.finish()
}

/// What happened to a cache when a request arrived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheEvent {
    /// No cache existed for the user.
    Built,
    /// The history is unchanged.
    Reused,
    /// The history grew by this many tokens.
    Extended(usize),
    /// The cached prefix no longer matches the history.
    Recomputed,
}

/// Brings `cache` up to date with `tokens`: reuse, extend by the new
/// suffix, or rebuild when the cached prefix was edited.
pub fn invalidate_or_reuse_cache<T: Scalar>(
    model: &Model<T>,
    cache: &mut KVCache<T>,
    tokens: &[Token],
) -> Result<(CacheEvent, FlopCounter)> {
    let n = cache.prefix_len();
    let intact = n <= tokens.len()
        && hash_tokens(&tokens[..n]) == cache.prefix_hash()
        && tokens[..n] == cache.tokens[..];
    if !intact {
        let (fresh, flops) = KVCache::build(model, tokens)?;
        *cache = fresh;
        return Ok((CacheEvent::Recomputed, flops));
    }
    if n == tokens.len() {
        return Ok((CacheEvent::Reused, FlopCounter::default()));
    }
    let flops = cache.extend(model, &tokens[n..])?;
    Ok((CacheEvent::Extended(tokens.len() - n), flops))
}

/// Caches across requests keyed by user id and prefix hash.
#[derive(Debug, Clone, Default)]
pub struct SessionCache<T: Scalar> {
    entries: HashMap<u64, KVCache<T>>,
}

impl<T: Scalar> SessionCache<T> {
    pub fn new() -> Self {
        Self {
            entries: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, user: u64) -> Option<&KVCache<T>> {
        self.entries.get(&user)
    }

    /// `(user, prefix hash)` of every entry.
    pub fn keys(&self) -> Vec<(u64, u64)> {
        let mut k: Vec<_> = self.entries.iter().map(|(&u, c)| (u, c.prefix_hash())).collect();
        k.sort_unstable();
        k
    }

    pub fn update(
        &mut self,
        model: &Model<T>,
        user: u64,
        tokens: &[Token],
    ) -> Result<(&KVCache<T>, CacheEvent, FlopCounter)> {
        let (event, flops) = match self.entries.get_mut(&user) {
            Some(c) => invalidate_or_reuse_cache(model, c, tokens)?,
            None => {
                let (c, f) = KVCache::build(model, tokens)?;
                self.entries.insert(user, c);
                (CacheEvent::Built, f)
            }
        };
        Ok((&self.entries[&user], event, flops))
    }
}
