//! Streaming and multi-epoch training loops.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::optim::DenseAdamW;
use crate::embedding::{AdamWConfig, SparseRows};
use crate::model::Model;
use crate::numeric::{Scalar, Tape};
use crate::sequence::{build_sequence, generative_emission_sampler, Event, EventKind, TokenSequence};
use crate::stochastic_length::{select_indices, sl_decide, SLDecision, SLPolicy};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// One epoch is a single streaming pass in data order.
    pub epochs: usize,
    /// Reshuffle histories every epoch (multi-epoch only).
    pub shuffle: bool,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub num_negatives: usize,
    pub sl: Option<SLPolicy>,
    /// Emit each history with probability `min(1, c/n)`; `None` emits all.
    pub emission_c: Option<f64>,
    pub seed: u64,
    /// Steps between timeline entries.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            shuffle: false,
            batch_size: 1,
            optimizer: AdamWConfig::default(),
            num_negatives: 128,
            sl: None,
            emission_c: None,
            seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.epochs == 1 && self.shuffle {
            return Err(Error::config("shuffle", "a single streaming pass keeps data order"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.num_negatives == 0 {
            return Err(Error::config("num_negatives", "must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every", "must be at least 1"));
        }
        if let Some(c) = self.emission_c {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::config("emission_c", "must be finite and non-negative"));
            }
        }
        if let Some(sl) = &self.sl {
            sl.validate()?;
        }
        self.optimizer.validate()
    }

    pub fn is_streaming(&self) -> bool {
        self.epochs == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub step: u64,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    /// Histories read from the stream, over all epochs.
    pub records_seen: u64,
    /// Histories that produced a training instance.
    pub examples_used: u64,
    pub subsampled: u64,
    pub final_loss: Option<f64>,
    pub timeline: Vec<TimelinePoint>,
}

/// Optimizer state and counters around a model.
pub struct Trainer<T: Scalar> {
    pub cfg: TrainConfig,
    dense_opt: DenseAdamW<T>,
    rng: ChaCha8Rng,
    pub summary: TrainSummary,
    window: (f64, u64),
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &Model<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let dense_opt = DenseAdamW::new(model.dense.fields().iter().map(|m| m.shape()));
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            cfg,
            dense_opt,
            summary: TrainSummary::default(),
            window: (0.0, 0),
        })
    }

    /// Turns one history into a training instance: stochastic length,
    /// emission sampling, sequence construction and truncation to the
    /// encoder's maximum length. `None` when nothing is left to learn from.
    pub fn prepare(&mut self, model: &Model<T>, history: &[Event]) -> Result<Option<TokenSequence>> {
        let engaged: Vec<usize> = (0..history.len())
            .filter(|&i| history[i].kind == EventKind::Engagement)
            .collect();
        if engaged.is_empty() {
            return Ok(None);
        }
        let mut events = history.to_vec();
        if let Some(policy) = &self.cfg.sl {
            if let SLDecision::Subsample(l) = sl_decide(engaged.len(), policy, &mut self.rng)? {
                let ts: Vec<i64> = engaged.iter().map(|&i| history[i].ts).collect();
                let now = *ts.last().unwrap();
                let keep = select_indices(l, policy.selection, &ts, now, &mut self.rng)?;
                let mut mark = vec![true; history.len()];
                engaged.iter().for_each(|&i| mark[i] = false);
                keep.iter().for_each(|&k| mark[engaged[k]] = true);
                events = history.iter().zip(&mark).filter(|(_, &m)| m).map(|(e, _)| *e).collect();
                self.summary.subsampled += 1;
            }
        }
        if let Some(c) = self.cfg.emission_c {
            let n = events.iter().filter(|e| e.kind == EventKind::Engagement).count();
            if !generative_emission_sampler(n, c, &mut self.rng) {
                return Ok(None);
            }
        }
        let mut seq = build_sequence(&events, model.cfg.task, model.cfg.positive_actions);
        truncate(&mut seq, model.cfg.encoder.max_seq_len);
        Ok((seq.num_targets() > 0).then_some(seq))
    }

    /// `k` negatives drawn uniformly with replacement from `corpus`.
    pub fn sample_negatives(&mut self, corpus: &[u64]) -> Result<Vec<u64>> {
        if corpus.is_empty() {
            return Err(Error::Invalid("no items available for negative sampling".into()));
        }
        Ok((0..self.cfg.num_negatives)
            .map(|_| corpus[self.rng.random_range(0..corpus.len())])
            .collect())
    }

    /// One optimizer step on `batch`. Returns the loss, or `None` when the
    /// batch has no targets.
    pub fn step(&mut self, model: &mut Model<T>, batch: &[TokenSequence], corpus: &[u64]) -> Result<Option<f64>> {
        let negatives = match model.cfg.task {
            crate::sequence::Task::Ranking => Vec::new(),
            _ => self.sample_negatives(corpus)?,
        };
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, batch, &negatives)?;
        let Some(loss) = model.loss(&mut tape, &bound, batch, &negatives)? else {
            return Ok(None);
        };
        let value = tape.value(loss).get(0, 0).f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss {value} at step {}",
                self.summary.steps + 1
            )));
        }
        let mut grads = tape.backward(loss)?;
        let dense: Vec<_> = bound.dense.fields().iter().map(|&&v| grads.take(v)).collect();
        self.dense_opt.step(model.dense.fields_mut(), &dense, &self.cfg.optimizer)?;
        let g = grads.take(bound.items.var);
        model.items.rowwise_adamw_step(&SparseRows::from_rows(&bound.items.rows, &g), &self.cfg.optimizer)?;
        if !bound.contexts.rows.is_empty() {
            let g = grads.take(bound.contexts.var);
            model
                .contexts
                .rowwise_adamw_step(&SparseRows::from_rows(&bound.contexts.rows, &g), &self.cfg.optimizer)?;
        }
        self.summary.steps += 1;
        self.summary.final_loss = Some(value);
        self.window.0 += value;
        self.window.1 += 1;
        if self.summary.steps % self.cfg.log_every as u64 == 0 {
            self.flush_window();
        }
        Ok(Some(value))
    }

    fn flush_window(&mut self) {
        if self.window.1 > 0 {
            self.summary.timeline.push(TimelinePoint {
                step: self.summary.steps,
                metric: "train_loss".into(),
                value: self.window.0 / self.window.1 as f64,
            });
            self.summary.timeline.push(TimelinePoint {
                step: self.summary.steps,
                metric: "examples_used".into(),
                value: self.summary.examples_used as f64,
            });
            self.window = (0.0, 0);
        }
    }

    /// Runs every epoch over `data`. A single epoch visits histories in
    /// data order; later epochs shuffle when configured.
    pub fn fit(&mut self, model: &mut Model<T>, data: &Dataset) -> Result<TrainSummary> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        for _ in 0..self.cfg.epochs {
            if self.cfg.shuffle {
                order.shuffle(&mut self.rng);
            }
            let mut batch = Vec::with_capacity(self.cfg.batch_size);
            let mut avail = 0;
            for &i in &order {
                self.summary.records_seen += 1;
                if let Some(seq) = self.prepare(model, &data.histories[i])? {
                    batch.push(seq);
                    self.summary.examples_used += 1;
                    avail = data.available[i];
                }
                if batch.len() == self.cfg.batch_size {
                    self.step(model, &batch, &data.corpus[..avail])?;
                    batch.clear();
                }
            }
            if !batch.is_empty() {
                self.step(model, &batch, &data.corpus[..avail])?;
            }
        }
        self.flush_window();
        Ok(self.summary.clone())
    }
}

/// Keeps the last `max_len` tokens.
pub fn truncate(seq: &mut TokenSequence, max_len: usize) {
    if seq.len() > max_len {
        let cut = seq.len() - max_len;
        seq.tokens.drain(..cut);
        seq.targets.drain(..cut);
    }
}

/// Trains `model` on `data` with a fresh trainer.
pub fn train<T: Scalar>(model: &mut Model<T>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainSummary> {
    Trainer::new(model, cfg.clone())?.fit(model, data)
}

/// `step,metric,value` rows.
pub fn write_timeline_csv(path: &Path, timeline: &[TimelinePoint]) -> Result<()> {
    let mut out = String::from("step,metric,value\n");
    for p in timeline {
        out += &format!("{},{},{}\n", p.step, p.metric, p.value);
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hstu::HstuConfig;
    use crate::model::ModelConfig;
    use crate::sequence::Task;

    fn tiny_model(task: Task, seed: u64) -> Model<f64> {
        let cfg = ModelConfig {
            encoder: HstuConfig {
                d_model: 8,
                num_heads: 2,
                d_qk: 4,
                d_v: 4,
                num_layers: 1,
                max_seq_len: 16,
                ..HstuConfig::default()
            },
            task,
            item_rows: 64,
            context_rows: 4,
            ..ModelConfig::default()
        };
        Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn toy_data() -> Dataset {
        let events: Vec<Event> = (0..6u64)
            .flat_map(|u| (0..8).map(move |p| Event::engagement(u, (u * 3 + p) % 20, 1 + (p as u32 & 2), p as i64 * 60)))
            .collect();
        Dataset::from_events(&events)
    }

    #[test]
    fn streaming_rejects_shuffle() {
        let cfg = TrainConfig {
            shuffle: true,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig { epochs: 3, ..cfg }.validate().is_ok());
    }

    #[test]
    fn zero_lr_keeps_parameters() {
        let mut m = tiny_model(Task::Retrieval, 0);
        let before = m.clone();
        let cfg = TrainConfig {
            optimizer: AdamWConfig {
                lr: 0.0,
                ..AdamWConfig::default()
            },
            num_negatives: 4,
            ..TrainConfig::default()
        };
        let s = train(&mut m, &toy_data(), &cfg).unwrap();
        assert!(s.steps > 0);
        assert_eq!(m.dense, before.dense);
        assert_eq!(m.items.weights(), before.items.weights());
    }

    #[test]
    fn streaming_touches_each_record_once() {
        let data = toy_data();
        for task in [Task::Ranking, Task::Retrieval, Task::NextContent] {
            let mut m = tiny_model(task, 1);
            let cfg = TrainConfig {
                batch_size: 4,
                num_negatives: 4,
                log_every: 1,
                ..TrainConfig::default()
            };
            let s = train(&mut m, &data, &cfg).unwrap();
            assert_eq!(s.records_seen, data.len() as u64);
            assert_eq!(s.examples_used, data.len() as u64);
            assert_eq!(s.steps, 2);
        }
    }

    #[test]
    fn same_seed_same_timeline() {
        let data = toy_data();
        let cfg = TrainConfig {
            epochs: 3,
            shuffle: true,
            num_negatives: 8,
            log_every: 2,
            seed: 4,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m = tiny_model(Task::Retrieval, 2);
            train(&mut m, &data, &cfg).unwrap().timeline
        };
        let a = run();
        assert!(!a.is_empty());
        assert_eq!(a, run());
    }

    #[test]
    fn overfits_single_sequence() {
        let mut m = tiny_model(Task::Retrieval, 3);
        let history: Vec<Event> = (0..6).map(|p| Event::engagement(0, p, 1, p as i64)).collect();
        let cfg = TrainConfig {
            num_negatives: 16,
            optimizer: AdamWConfig {
                lr: 0.01,
                ..AdamWConfig::default()
            },
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&m, cfg).unwrap();
        let seq = t.prepare(&m, &history).unwrap().unwrap();
        let corpus: Vec<u64> = (0..40).collect();
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            last = t.step(&mut m, std::slice::from_ref(&seq), &corpus).unwrap().unwrap();
        }
        assert!(last < 0.1, "loss {last}");
    }

    #[test]
    fn stochastic_length_shortens_histories() {
        let mut m = tiny_model(Task::Retrieval, 5);
        let cfg = TrainConfig {
            sl: Some(SLPolicy::new(1.5, 16, crate::stochastic_length::Selection::Greedy).unwrap()),
            ..TrainConfig::default()
        };
        let history: Vec<Event> = (0..16).map(|p| Event::engagement(0, p, 1, p as i64)).collect();
        let mut t = Trainer::new(&m, cfg).unwrap();
        let mut lens = Vec::new();
        for _ in 0..50 {
            lens.push(t.prepare(&m, &history).unwrap().unwrap().len());
        }
        // L* = floor(16^0.75) = 8; full length kept with probability 16^1.5/256 = 0.25
        assert!(lens.iter().all(|&l| l == 8 || l == 16));
        assert!(lens.contains(&8) && t.summary.subsampled > 0);
        let _ = &mut m;
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut m = tiny_model(Task::Retrieval, 6);
        m.items.weights_mut().data_mut()[0] = f64::NAN;
        let history: Vec<Event> = (0..4).map(|p| Event::engagement(0, 0, 1, p)).collect();
        let mut t = Trainer::new(&m, TrainConfig::default()).unwrap();
        let seq = t.prepare(&m, &history).unwrap().unwrap();
        let err = t.step(&mut m, &[seq], &[0, 1, 2]).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)), "{err}");
    }
}
