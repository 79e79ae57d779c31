//! Training and evaluation streams.

use crate::sequence::{sequentialize_users, Event, EventKind};
use crate::synthetic::DPConfig;

/// User histories in stream order with the item corpus they draw from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    /// Sequentialized events per user.
    pub histories: Vec<Vec<Event>>,
    /// Every item id, ascending.
    pub corpus: Vec<u64>,
    /// Per history, how many leading corpus items exist at that point of
    /// the stream (negatives and evaluation scoring draw from this prefix).
    pub available: Vec<usize>,
}

impl Dataset {
    /// Groups a raw event log by user; users are ordered by id.
    pub fn from_events(events: &[Event]) -> Self {
        let histories: Vec<Vec<Event>> = sequentialize_users(events).into_iter().map(|(_, h)| h).collect();
        let mut corpus: Vec<u64> = events
            .iter()
            .filter(|e| e.kind == EventKind::Engagement)
            .map(|e| e.item_id)
            .collect();
        corpus.sort_unstable();
        corpus.dedup();
        let available = vec![corpus.len(); histories.len()];
        Self {
            histories,
            corpus,
            available,
        }
    }

    /// Synthetic records as users whose timestamps are positions; record
    /// `i` sits at stream index `first_index + i`.
    pub fn from_records(records: &[Vec<u64>], cfg: &DPConfig, first_index: usize) -> Self {
        let histories = records
            .iter()
            .enumerate()
            .map(|(u, items)| {
                items
                    .iter()
                    .enumerate()
                    .map(|(p, &i)| Event::engagement((first_index + u) as u64, i, 1, p as i64))
                    .collect()
            })
            .collect();
        let available = (0..records.len()).map(|i| cfg.available_items(first_index + i)).collect();
        Self {
            histories,
            corpus: (0..cfg.num_items as u64).collect(),
            available,
        }
    }

    pub fn len(&self) -> usize {
        self.histories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.histories.is_empty()
    }

    pub fn available_corpus(&self, i: usize) -> &[u64] {
        &self.corpus[..self.available[i].min(self.corpus.len())]
    }

    /// Training histories without their final engagement, and the full
    /// histories for scoring that engagement.
    pub fn leave_one_out(&self) -> (Dataset, Dataset) {
        let mut train = self.clone();
        let mut test = self.clone();
        let mut keep = Vec::new();
        for (i, h) in self.histories.iter().enumerate() {
            let last = h.iter().rposition(|e| e.kind == EventKind::Engagement);
            match last {
                Some(p) if h[..p].iter().any(|e| e.kind == EventKind::Engagement) => {
                    train.histories[i] = h[..p].to_vec();
                    keep.push(i);
                }
                _ => {}
            }
        }
        let pick = |d: &Dataset| Dataset {
            histories: keep.iter().map(|&i| d.histories[i].clone()).collect(),
            corpus: d.corpus.clone(),
            available: keep.iter().map(|&i| d.available[i]).collect(),
        };
        train = pick(&train);
        test = pick(&test);
        (train, test)
    }
}
