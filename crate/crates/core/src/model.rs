//! A complete generative recommender: token embeddings, the encoder stack
//! and the task heads.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embedding::{read_exact, read_f32s, read_u64, write_f32s, EmbeddingTable, RowBinding};
use crate::hstu::{forward_encoder, EncoderParams, HstuConfig, Layout, MaskKind};
use crate::numeric::{FlopKind, Matrix, Scalar, Tape, Var};
use crate::sequence::{Context, Target, Task, Token, TokenSequence};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"HSTUMDL1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: HstuConfig,
    pub task: Task,
    /// Rows of the hashed item table.
    pub item_rows: usize,
    /// Rows of the hashed contextual-feature table.
    pub context_rows: usize,
    /// Number of atomic action types (bits of the action mask).
    pub num_actions: usize,
    /// Actions that make an engagement a retrieval positive.
    pub positive_actions: u32,
    /// Per-action loss weights for ranking; empty means all ones.
    pub task_weights: Vec<f64>,
    pub embedding_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder: HstuConfig::default(),
            task: Task::Retrieval,
            item_rows: 4096,
            context_rows: 256,
            num_actions: 2,
            positive_actions: 1,
            task_weights: Vec::new(),
            embedding_std: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.item_rows == 0 || self.context_rows == 0 {
            return Err(Error::config("item_rows", "tables need at least one row"));
        }
        if self.num_actions == 0 || self.num_actions > 32 {
            return Err(Error::config("num_actions", "must be between 1 and 32"));
        }
        if !self.task_weights.is_empty() && self.task_weights.len() != self.num_actions {
            return Err(Error::config(
                "task_weights",
                format!("expected {} weights, got {}", self.num_actions, self.task_weights.len()),
            ));
        }
        if self.task_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::config("task_weights", "weights must be finite and non-negative"));
        }
        if !(self.embedding_std >= 0.0 && self.embedding_std.is_finite()) {
            return Err(Error::config("embedding_std", "must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn weights(&self) -> Vec<f64> {
        if self.task_weights.is_empty() {
            vec![1.0; self.num_actions]
        } else {
            self.task_weights.clone()
        }
    }
}

/// Dense parameters: the encoder, the action embedding table and the
/// ranking head `silu(y·W1 + b1)·W2 + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<P> {
    pub encoder: EncoderParams<P>,
    /// `A × d`
    pub actions: P,
    pub head_w1: P,
    pub head_b1: P,
    pub head_w2: P,
    pub head_b2: P,
}

impl<P> DenseParams<P> {
    pub fn fields(&self) -> Vec<&P> {
        let mut f = self.encoder.fields();
        f.extend([&self.actions, &self.head_w1, &self.head_b1, &self.head_w2, &self.head_b2]);
        f
    }

    pub fn fields_mut(&mut self) -> Vec<&mut P> {
        let mut f = self.encoder.fields_mut();
        f.extend([
            &mut self.actions,
            &mut self.head_w1,
            &mut self.head_b1,
            &mut self.head_w2,
            &mut self.head_b2,
        ]);
        f
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> DenseParams<Q> {
        DenseParams {
            encoder: self.encoder.map(&mut f),
            actions: f(&self.actions),
            head_w1: f(&self.head_w1),
            head_b1: f(&self.head_b1),
            head_w2: f(&self.head_w2),
            head_b2: f(&self.head_b2),
        }
    }

    /// Same layout, values taken in field order.
    pub fn rebuild<Q>(&self, values: impl IntoIterator<Item = Q>) -> Option<DenseParams<Q>> {
        let mut it = values.into_iter();
        let n = self.encoder.fields().len();
        let encoder = self.encoder.rebuild(it.by_ref().take(n).collect::<Vec<_>>())?;
        let out = DenseParams {
            encoder,
            actions: it.next()?,
            head_w1: it.next()?,
            head_b1: it.next()?,
            head_w2: it.next()?,
            head_b2: it.next()?,
        };
        it.next().is_none().then_some(out)
    }
}

/// Model parameters placed on a tape.
pub struct Bound {
    pub dense: DenseParams<Var>,
    pub items: RowBinding,
    pub contexts: RowBinding,
    /// Item rows, then context rows, then one zero row.
    table: Var,
    zero_row: usize,
}

impl Bound {
    pub fn new<T: Scalar>(
        tape: &mut Tape<T>,
        dense: DenseParams<Var>,
        items: RowBinding,
        contexts: RowBinding,
    ) -> Result<Self> {
        let d = tape.shape(dense.actions).1;
        let zero = tape.constant(Matrix::zeros(1, d));
        let zero_row = items.rows.len() + contexts.rows.len();
        let table = tape.concat_rows(&[items.var, contexts.var, zero])?;
        Ok(Self {
            dense,
            items,
            contexts,
            table,
            zero_row,
        })
    }
}

pub fn context_key(ctx: &Context) -> u64 {
    ((ctx.feature_id as u64) << 48) ^ ctx.value_id
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    pub cfg: ModelConfig,
    pub dense: DenseParams<Matrix<T>>,
    pub items: EmbeddingTable<T>,
    pub contexts: EmbeddingTable<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.encoder.d_model;
        let a = cfg.num_actions;
        let encoder = EncoderParams::init(&cfg.encoder, rng);
        let mut gauss = |r: usize, c: usize, std: f64| {
            let n = Normal::new(0.0, std).expect("finite std");
            Matrix::from_fn(r, c, |_, _| T::of(n.sample(rng)))
        };
        let dense = DenseParams {
            encoder,
            actions: gauss(a, d, cfg.embedding_std),
            head_w1: gauss(d, d, 1.0 / (d as f64).sqrt()),
            head_b1: Matrix::zeros(1, d),
            head_w2: gauss(d, a, 1.0 / (d as f64).sqrt()),
            head_b2: Matrix::zeros(1, a),
        };
        let items = EmbeddingTable::random(cfg.item_rows, d, cfg.embedding_std, rng);
        let contexts = EmbeddingTable::random(cfg.context_rows, d, cfg.embedding_std, rng);
        Ok(Self {
            cfg,
            dense,
            items,
            contexts,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.dense.fields().iter().map(|m| m.len()).sum::<usize>()
            + self.items.weights().len()
            + self.contexts.weights().len()
    }

    /// Item rows referenced by tokens and targets of `seqs`.
    pub fn item_rows_of(&self, seqs: &[TokenSequence]) -> Vec<usize> {
        let mut rows = Vec::new();
        for s in seqs {
            rows.extend(s.tokens.iter().filter_map(|t| t.item()).map(|i| self.items.row_of(i)));
            rows.extend(s.targets.iter().filter_map(|t| match t {
                Target::Item(i) => Some(self.items.row_of(*i)),
                _ => None,
            }));
        }
        rows
    }

    pub fn context_rows_of(&self, seqs: &[TokenSequence]) -> Vec<usize> {
        seqs.iter()
            .flat_map(|s| s.tokens.iter())
            .filter_map(|t| match t {
                Token::Contextual { ctx, .. } => Some(self.contexts.row_of(context_key(ctx))),
                _ => None,
            })
            .collect()
    }

    /// Places every parameter a batch touches on `tape`; `extra_items`
    /// adds rows such as sampled negatives.
    pub fn bind(&self, tape: &mut Tape<T>, seqs: &[TokenSequence], extra_items: &[u64]) -> Result<Bound> {
        let dense = self.dense.map(|m| tape.leaf(m.clone()));
        let mut rows = self.item_rows_of(seqs);
        rows.extend(extra_items.iter().map(|&i| self.items.row_of(i)));
        let items = self.items.bind(tape, rows);
        let contexts = self.contexts.bind(tape, self.context_rows_of(seqs));
        Bound::new(tape, dense, items, contexts)
    }

    /// Places the dense parameters and the rows `tokens` reference on `tape`.
    pub fn bind_tokens(&self, tape: &mut Tape<T>, tokens: &[Token]) -> Result<Bound> {
        let dense = self.dense.map(|m| tape.constant(m.clone()));
        let items = self.items.bind(tape, tokens.iter().filter_map(|t| t.item()).map(|i| self.items.row_of(i)));
        let ctx = tokens.iter().filter_map(|t| match t {
            Token::Contextual { ctx, .. } => Some(self.contexts.row_of(context_key(ctx))),
            _ => None,
        });
        let contexts = self.contexts.bind(tape, ctx);
        Bound::new(tape, dense, items, contexts)
    }

    /// Input embeddings for a run of tokens: item or context row plus the
    /// sum of active action embeddings.
    pub fn embed_tokens(&self, tape: &mut Tape<T>, bound: &Bound, tokens: &[Token]) -> Result<Var> {
        let u = bound.items.rows.len();
        let a = self.cfg.num_actions;
        let mut idx = Vec::with_capacity(tokens.len());
        let mut any_action = false;
        let mut multihot = Matrix::zeros(tokens.len(), a);
        for (r, t) in tokens.iter().enumerate() {
            idx.push(match t {
                Token::Content { item, .. } | Token::Combined { item, .. } => {
                    bound.items.local(self.items.row_of(*item))
                }
                Token::Contextual { ctx, .. } => u + bound.contexts.local(self.contexts.row_of(context_key(ctx))),
                Token::Action { .. } => bound.zero_row,
            });
            let bits = t.actions();
            for e in 0..a {
                if bits >> e & 1 == 1 {
                    multihot.set(r, e, T::one());
                    any_action = true;
                }
            }
        }
        let x = tape.gather_rows(bound.table, idx)?;
        if !any_action {
            return Ok(x);
        }
        let m = tape.constant(multihot);
        let act = tape.matmul(m, bound.dense.actions, FlopKind::Other)?;
        tape.add(x, act)
    }

    /// Encoder output for every token of every sequence (`Σ len × d`).
    pub fn forward(&self, tape: &mut Tape<T>, bound: &Bound, seqs: &[TokenSequence]) -> Result<(Var, Layout)> {
        let tokens: Vec<Token> = seqs.iter().flat_map(|s| s.tokens.iter().copied()).collect();
        let mut offsets = vec![0];
        for s in seqs {
            offsets.push(offsets.last().unwrap() + s.len());
        }
        let ts = tokens.iter().map(Token::ts).collect();
        let layout = Layout::new(offsets, ts, &MaskKind::Causal)?;
        let x = self.embed_tokens(tape, bound, &tokens)?;
        let out = forward_encoder(tape, &self.cfg.encoder, &bound.dense.encoder, x, &layout)?;
        Ok((out.y, layout))
    }

    /// Ranking head logits (`rows × A`).
    pub fn head(&self, tape: &mut Tape<T>, dense: &DenseParams<Var>, y: Var) -> Result<Var> {
        let h = tape.linear(y, dense.head_w1, dense.head_b1, FlopKind::Other)?;
        let h = tape.silu(h);
        tape.linear(h, dense.head_w2, dense.head_b2, FlopKind::Other)
    }

    /// Mean loss over every defined target of `seqs`, or `None` when there
    /// are no targets. Item targets use sampled softmax against `negatives`
    /// shared by the batch; a negative equal to a row's positive is masked
    /// out of that row. Action targets use multi-task binary cross-entropy.
    pub fn loss(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        seqs: &[TokenSequence],
        negatives: &[u64],
    ) -> Result<Option<Var>> {
        let (y, _) = self.forward(tape, bound, seqs)?;
        let mut pos_rows = Vec::new();
        let mut item_targets = Vec::new();
        let mut action_targets = Vec::new();
        let mut act_rows = Vec::new();
        let mut base = 0;
        for s in seqs {
            for (i, t) in s.targets.iter().enumerate() {
                match *t {
                    Target::Item(id) => {
                        pos_rows.push(base + i);
                        item_targets.push(id);
                    }
                    Target::Actions(bits) => {
                        act_rows.push(base + i);
                        action_targets.push(bits);
                    }
                    Target::None => {}
                }
            }
            base += s.len();
        }
        let mut terms = Vec::new();
        if !pos_rows.is_empty() {
            if negatives.is_empty() {
                return Err(Error::config("negatives", "sampled softmax needs at least one negative"));
            }
            let u = tape.gather_rows(y, pos_rows)?;
            terms.push((item_targets.len(), self.sampled_softmax(tape, bound, u, &item_targets, negatives)?));
        }
        if !act_rows.is_empty() {
            let u = tape.gather_rows(y, act_rows)?;
            let logits = self.head(tape, &bound.dense, u)?;
            let labels = action_labels(&action_targets, self.cfg.num_actions);
            let w = self.cfg.weights().into_iter().map(T::of).collect();
            terms.push((action_targets.len(), tape.bce_with_logits(logits, labels, w)?));
        }
        Ok(match terms.len() {
            0 => None,
            1 => Some(terms[0].1),
            _ => {
                // both are means; recombine as a mean over all target positions
                let total = (terms[0].0 + terms[1].0) as f64;
                let a = tape.scale(terms[0].1, T::of(terms[0].0 as f64 / total));
                let b = tape.scale(terms[1].1, T::of(terms[1].0 as f64 / total));
                Some(tape.add(a, b)?)
            }
        })
    }

    fn sampled_softmax(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        u: Var,
        positives: &[u64],
        negatives: &[u64],
    ) -> Result<Var> {
        let pos_rows: Vec<usize> = positives.iter().map(|&i| self.items.row_of(i)).collect();
        let neg_rows: Vec<usize> = negatives.iter().map(|&i| self.items.row_of(i)).collect();
        let e_pos = tape.gather_rows(bound.items.var, pos_rows.iter().map(|&r| bound.items.local(r)).collect())?;
        let e_neg = tape.gather_rows(bound.items.var, neg_rows.iter().map(|&r| bound.items.local(r)).collect())?;
        let pos = tape.row_dot(u, e_pos, FlopKind::Other)?;
        let mut neg = tape.matmul_bt(u, e_neg, FlopKind::Other)?;
        let collide = Matrix::from_fn(pos_rows.len(), neg_rows.len(), |i, k| {
            if pos_rows[i] == neg_rows[k] {
                T::of(-1e9)
            } else {
                T::zero()
            }
        });
        if collide.data().iter().any(|&x| x != T::zero()) {
            let c = tape.constant(collide);
            neg = tape.add(neg, c)?;
        }
        let logits = tape.concat_cols(&[pos, neg])?;
        tape.softmax_cross_entropy(logits, vec![0; positives.len()])
    }

    /// Encoder outputs without gradient tracking.
    pub fn encode(&self, seqs: &[TokenSequence]) -> Result<(Matrix<T>, Vec<usize>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, seqs, &[])?;
        let (y, layout) = self.forward(&mut tape, &bound, seqs)?;
        Ok((tape.value(y).clone(), layout.offsets))
    }

    /// `users · E[ids]ᵀ`
    pub fn item_scores(&self, users: &Matrix<T>, ids: &[u64]) -> Result<Matrix<T>> {
        let e = self.items.weights().select_rows(&self.items.rows_of(ids));
        users.matmul_bt(&e)
    }

    /// Ranking head probabilities for encoder outputs `y`.
    pub fn action_probs(&self, y: &Matrix<T>) -> Result<Matrix<T>> {
        let mut tape = Tape::new();
        let dense = DenseParams {
            encoder: EncoderParams { layers: Vec::new() },
            actions: tape.constant(self.dense.actions.clone()),
            head_w1: tape.constant(self.dense.head_w1.clone()),
            head_b1: tape.constant(self.dense.head_b1.clone()),
            head_w2: tape.constant(self.dense.head_w2.clone()),
            head_b2: tape.constant(self.dense.head_b2.clone()),
        };
        let yv = tape.constant(y.clone());
        let logits = self.head(&mut tape, &dense, yv)?;
        Ok(tape.value(logits).map(|z| T::one() / (T::one() + (-z).exp())))
    }

    /// Checkpoint layout: magic, config JSON length (u64) and bytes, then
    /// every dense tensor as `rows`, `cols` (u64) and f32 values in field
    /// order, then the item and context tables.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        let cfg = serde_json::to_vec(&self.cfg)?;
        w.write_all(MAGIC)?;
        w.write_all(&(cfg.len() as u64).to_le_bytes())?;
        w.write_all(&cfg)?;
        for m in self.dense.fields() {
            w.write_all(&(m.rows() as u64).to_le_bytes())?;
            w.write_all(&(m.cols() as u64).to_le_bytes())?;
            write_f32s(w, m.data())?;
        }
        self.items.write_to(w)?;
        self.contexts.write_to(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(f))
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        read_exact(r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("model magic mismatch".into()));
        }
        let len = read_u64(r)? as usize;
        if len > 1 << 20 {
            return Err(Error::Checkpoint(format!("config block of {len} bytes")));
        }
        let mut buf = vec![0u8; len];
        read_exact(r, &mut buf)?;
        let cfg: ModelConfig = serde_json::from_slice(&buf)?;
        cfg.validate()?;
        let template = Self::shapes(&cfg);
        let mut tensors = Vec::new();
        for &(er, ec) in template.fields() {
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            if (rows, cols) != (er, ec) {
                return Err(Error::Checkpoint(format!(
                    "tensor of shape {rows}x{cols} where {er}x{ec} was expected"
                )));
            }
            tensors.push(Matrix::new(rows, cols, read_f32s(r, rows * cols)?)?);
        }
        let dense = template.rebuild(tensors).expect("one tensor per field");
        let items = EmbeddingTable::read_from(r)?;
        let contexts = EmbeddingTable::read_from(r)?;
        let d = cfg.encoder.d_model;
        if items.num_rows() != cfg.item_rows || items.dim() != d || contexts.num_rows() != cfg.context_rows || contexts.dim() != d {
            return Err(Error::Checkpoint("embedding tables do not match the config".into()));
        }
        Ok(Self {
            cfg,
            dense,
            items,
            contexts,
        })
    }

    fn shapes(cfg: &ModelConfig) -> DenseParams<(usize, usize)> {
        let d = cfg.encoder.d_model;
        let a = cfg.num_actions;
        DenseParams {
            encoder: EncoderParams::<Matrix<T>>::zeros(&cfg.encoder).map(|m| m.shape()),
            actions: (a, d),
            head_w1: (d, d),
            head_b1: (1, d),
            head_w2: (d, a),
            head_b2: (1, a),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let table = |t: &EmbeddingTable<T>| EmbeddingTable::from_weights(t.weights().cast());
        Model {
            cfg: self.cfg.clone(),
            dense: self.dense.map(|m| m.cast()),
            items: table(&self.items),
            contexts: table(&self.contexts),
        }
    }
}

/// `rows × A` 0/1 labels from action bitmasks.
pub fn action_labels<T: Scalar>(bits: &[u32], num_actions: usize) -> Matrix<T> {
    Matrix::from_fn(bits.len(), num_actions, |r, e| {
        if bits[r] >> e & 1 == 1 {
            T::one()
        } else {
            T::zero()
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{build_sequence, Event};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(task: Task) -> ModelConfig {
        ModelConfig {
            encoder: HstuConfig {
                d_model: 8,
                num_heads: 2,
                d_qk: 4,
                d_v: 4,
                num_layers: 2,
                max_seq_len: 32,
                ..HstuConfig::default()
            },
            task,
            item_rows: 64,
            context_rows: 8,
            ..ModelConfig::default()
        }
    }

    fn history() -> Vec<Event> {
        let mut ev: Vec<Event> = (0..6).map(|i| Event::engagement(1, 10 + i, 1 + (i as u32 % 3), 100 * i as i64)).collect();
        ev.insert(2, Event::contextual(1, 3, 9, 150));
        ev
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m: Model<f32> = Model::new(small_cfg(Task::Ranking), &mut rng).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = Model::<f32>::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.dense, m.dense);
        assert_eq!(back.items.weights(), m.items.weights());
        buf[0] = b'X';
        assert!(Model::<f32>::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn losses_are_finite_for_each_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for task in [Task::Ranking, Task::Retrieval, Task::NextContent] {
            let m: Model<f64> = Model::new(small_cfg(task), &mut rng).unwrap();
            let seq = build_sequence(&history(), task, 1);
            let mut tape = Tape::new();
            let negs = [40, 41, 12];
            let b = m.bind(&mut tape, std::slice::from_ref(&seq), &negs).unwrap();
            let l = m.loss(&mut tape, &b, &[seq], &negs).unwrap().unwrap();
            assert!(tape.value(l).get(0, 0).is_finite());
        }
    }

    #[test]
    fn untrained_sampled_softmax_near_uniform() {
        let mut cfg = small_cfg(Task::Retrieval);
        cfg.embedding_std = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: Model<f64> = Model::new(cfg, &mut rng).unwrap();
        let seq = build_sequence(&history(), Task::Retrieval, 1);
        let negs: Vec<u64> = (30..37).collect();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape, std::slice::from_ref(&seq), &negs).unwrap();
        let l = m.loss(&mut tape, &b, &[seq], &negs).unwrap().unwrap();
        // zero item embeddings make every logit zero
        assert!((tape.value(l).get(0, 0) - 8f64.ln()).abs() < 1e-12);
    }
}
