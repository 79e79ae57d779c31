//! Offline evaluation over full corpora.

use serde::{Deserialize, Serialize};

use super::data::Dataset;
use super::metrics::{normalized_entropy, MetricReport, RankAccumulator};
use super::trainer::truncate;
use crate::model::Model;
use crate::numeric::{Matrix, Scalar};
use crate::sequence::{build_sequence, Target, Task};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTargets {
    /// The final defined target of each history (leave-one-out).
    #[default]
    Last,
    /// Every defined target.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub targets: EvalTargets,
    /// Histories encoded per forward pass.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![1, 10, 50, 200],
            targets: EvalTargets::Last,
            batch_size: 32,
        }
    }
}

/// HR/NDCG/log-perplexity for item targets and NE per action for ranking
/// targets. Items are scored against each history's available corpus.
pub fn evaluate<T: Scalar>(model: &Model<T>, data: &Dataset, cfg: &EvalConfig) -> Result<MetricReport> {
    let mut acc = RankAccumulator::new(&cfg.ks);
    let a = model.cfg.num_actions;
    let mut preds: Vec<Vec<f64>> = vec![Vec::new(); a];
    let mut labels: Vec<Vec<f64>> = vec![Vec::new(); a];
    let mut cached: Option<(usize, Matrix<T>)> = None;

    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(cfg.batch_size.max(1)) {
        let mut seqs = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let mut s = build_sequence(&data.histories[i], model.cfg.task, model.cfg.positive_actions);
            truncate(&mut s, model.cfg.encoder.max_seq_len);
            if cfg.targets == EvalTargets::Last {
                if let Some(p) = s.targets.iter().rposition(|t| t.is_defined()) {
                    for t in &mut s.targets[..p] {
                        *t = Target::None;
                    }
                }
            }
            seqs.push(s);
        }
        let nonempty: Vec<usize> = (0..seqs.len()).filter(|&k| !seqs[k].is_empty()).collect();
        if nonempty.is_empty() {
            continue;
        }
        let batch: Vec<_> = nonempty.iter().map(|&k| seqs[k].clone()).collect();
        let (y, offsets) = model.encode(&batch)?;
        for (b, &k) in nonempty.iter().enumerate() {
            let i = chunk[k];
            let s = &batch[b];
            let rows: Vec<(usize, Target)> = s
                .targets
                .iter()
                .enumerate()
                .filter(|(_, t)| t.is_defined())
                .map(|(p, t)| (offsets[b] + p, *t))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let u = y.select_rows(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
            match model.cfg.task {
                Task::Ranking => {
                    let p = model.action_probs(&u)?;
                    for (r, (_, t)) in rows.iter().enumerate() {
                        if let Target::Actions(bits) = t {
                            for e in 0..a {
                                preds[e].push(p.get(r, e).f64().clamp(1e-7, 1.0 - 1e-7));
                                labels[e].push((bits >> e & 1) as f64);
                            }
                        }
                    }
                }
                Task::Retrieval | Task::NextContent => {
                    let corpus = data.available_corpus(i);
                    let emb = match &cached {
                        Some((n, m)) if *n == corpus.len() => m,
                        _ => {
                            let m = model.items.weights().select_rows(&model.items.rows_of(corpus));
                            cached = Some((corpus.len(), m));
                            &cached.as_ref().unwrap().1
                        }
                    };
                    let scores = u.matmul_bt(emb)?;
                    for (r, (_, t)) in rows.iter().enumerate() {
                        if let Target::Item(id) = t {
                            if corpus.binary_search(id).is_err() {
                                continue;
                            }
                            let sc: Vec<f64> = scores.row(r).iter().map(|x| x.f64()).collect();
                            acc.add(&sc, corpus, *id)?;
                        }
                    }
                }
            }
        }
    }
    let mut report = MetricReport::default();
    acc.finish(&mut report);
    for e in 0..a {
        if let Ok(ne) = normalized_entropy(&preds[e], &labels[e]) {
            report.ne.insert(format!("action_{e}"), ne);
        }
    }
    if model.cfg.task == Task::Ranking {
        report.examples_seen = preds.first().map_or(0, |p| p.len() as u64);
    }
    Ok(report)
}
