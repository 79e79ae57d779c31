//! Ranking metrics, normalized entropy and log perplexity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::numeric::ops::log_sum_exp;
use crate::{Error, Result};

/// 1-based rank of `target` among `ids`: items scoring strictly higher come
/// first, and among equal scores smaller ids come first.
pub fn rank_of(scores: &[f64], ids: &[u64], target: u64) -> Result<usize> {
    if scores.len() != ids.len() {
        return Err(Error::Shape {
            op: "rank_of",
            left: (scores.len(), 1),
            right: (ids.len(), 1),
        });
    }
    let t = ids
        .iter()
        .position(|&i| i == target)
        .ok_or_else(|| Error::Invalid(format!("target {target} is not in the corpus")))?;
    let st = scores[t];
    Ok(1 + scores
        .iter()
        .zip(ids)
        .filter(|&(&s, &i)| s > st || (s == st && i < target))
        .count())
}

/// `(K, HR@K, NDCG@K)` for each `K`.
pub fn hr_ndcg(scores: &[f64], ids: &[u64], target: u64, ks: &[usize]) -> Result<Vec<(usize, f64, f64)>> {
    let r = rank_of(scores, ids, target)?;
    Ok(ks.iter().map(|&k| {
        let (hr, ndcg) = rank_metrics(r, k);
        (k, hr, ndcg)
    }).collect())
}

pub fn rank_metrics(rank: usize, k: usize) -> (f64, f64) {
    if rank <= k {
        (1.0, 1.0 / ((rank + 1) as f64).log2())
    } else {
        (0.0, 0.0)
    }
}

/// Cross-entropy of the predictions divided by the entropy of the label base rate.
pub fn normalized_entropy(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::Invalid(format!("{} predictions for {} labels", p.len(), y.len())));
    }
    let n = p.len() as f64;
    let base = y.iter().sum::<f64>() / n;
    if base <= 0.0 || base >= 1.0 {
        return Err(Error::Invalid(format!("base rate {base} leaves NE undefined")));
    }
    let ce = -p
        .iter()
        .zip(y)
        .map(|(&p, &y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        .sum::<f64>()
        / n;
    let h = -(base * base.ln() + (1.0 - base) * (1.0 - base).ln());
    Ok(ce / h)
}

/// Mean `−ln softmax(row)[target]` over rows of logits.
pub fn log_perplexity(logits: &[Vec<f64>], targets: &[usize]) -> Result<f64> {
    if logits.len() != targets.len() || logits.is_empty() {
        return Err(Error::Invalid(format!("{} rows for {} targets", logits.len(), targets.len())));
    }
    let mut total = 0.0;
    for (row, &t) in logits.iter().zip(targets) {
        if t >= row.len() {
            return Err(Error::Invalid(format!("target {t} outside a row of {}", row.len())));
        }
        total += log_sum_exp(row.iter().copied()) - row[t];
    }
    Ok(total / targets.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub hr_at_k: BTreeMap<usize, f64>,
    pub ndcg_at_k: BTreeMap<usize, f64>,
    /// Normalized entropy per action name.
    pub ne: BTreeMap<String, f64>,
    pub log_pplx: Option<f64>,
    pub examples_seen: u64,
}

/// Running means of rank metrics and log perplexity.
#[derive(Debug, Clone)]
pub struct RankAccumulator {
    ks: Vec<usize>,
    hr: Vec<f64>,
    ndcg: Vec<f64>,
    nll: f64,
    count: u64,
}

impl RankAccumulator {
    pub fn new(ks: &[usize]) -> Self {
        Self {
            ks: ks.to_vec(),
            hr: vec![0.0; ks.len()],
            ndcg: vec![0.0; ks.len()],
            nll: 0.0,
            count: 0,
        }
    }

    /// Adds one prediction scored against a full corpus.
    pub fn add(&mut self, scores: &[f64], ids: &[u64], target: u64) -> Result<()> {
        let r = rank_of(scores, ids, target)?;
        for (i, &k) in self.ks.iter().enumerate() {
            let (h, n) = rank_metrics(r, k);
            self.hr[i] += h;
            self.ndcg[i] += n;
        }
        let t = ids.iter().position(|&i| i == target).expect("checked by rank_of");
        self.nll += log_sum_exp(scores.iter().copied()) - scores[t];
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(&self, report: &mut MetricReport) {
        let n = self.count.max(1) as f64;
        for (i, &k) in self.ks.iter().enumerate() {
            report.hr_at_k.insert(k, self.hr[i] / n);
            report.ndcg_at_k.insert(k, self.ndcg[i] / n);
        }
        if self.count > 0 {
            report.log_pplx = Some(self.nll / n);
        }
        report.examples_seen += self.count;
    }
}
