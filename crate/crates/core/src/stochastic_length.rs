//! Randomized truncation of long histories and the resulting sparsity.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Greedy,
    Random,
    #[default]
    FeatureWeighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SLPolicy {
    pub alpha: f64,
    /// Maximum content length `N_c`.
    pub max_len: usize,
    #[serde(default)]
    pub selection: Selection,
}

impl SLPolicy {
    pub fn new(alpha: f64, max_len: usize, selection: Selection) -> Result<Self> {
        let p = Self {
            alpha,
            max_len,
            selection,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return Err(Error::config("alpha", format!("{} is outside (1, 2]", self.alpha)));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        Ok(())
    }

    /// `floor(N_c^(α/2))`
    pub fn threshold(&self) -> usize {
        let l = (self.max_len as f64).powf(self.alpha / 2.0);
        // guard against pow landing just under an exact integer
        let r = l.round();
        let l = if (l - r).abs() < 1e-9 { r } else { l.floor() };
        (l as usize).max(1)
    }

    /// Probability that a history of length `n` is kept whole.
    pub fn keep_full_probability(&self, n: usize) -> f64 {
        if n <= self.threshold() {
            1.0
        } else {
            ((self.max_len as f64).powf(self.alpha) / (n as f64).powi(2)).clamp(0.0, 1.0)
        }
    }

    /// `(E[n'], E[n'²])` of the post-sampling length.
    pub fn expected_moments(&self, n: usize) -> (f64, f64) {
        let p = self.keep_full_probability(n);
        let (n, l) = (n as f64, self.threshold().min(n) as f64);
        (p * n + (1.0 - p) * l, p * n * n + (1.0 - p) * l * l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SLDecision {
    FullSequence,
    Subsample(usize),
}

pub fn sl_decide(n: usize, policy: &SLPolicy, rng: &mut impl Rng) -> Result<SLDecision> {
    policy.validate()?;
    if n == 0 {
        return Err(Error::Invalid("stochastic length needs a non-empty history".into()));
    }
    let p = policy.keep_full_probability(n);
    if p >= 1.0 || rng.random::<f64>() < p {
        Ok(SLDecision::FullSequence)
    } else {
        Ok(SLDecision::Subsample(policy.threshold()))
    }
}

/// Indices (ascending) of the `l` positions kept by `method`. Recency is
/// `f_i = now − t_i`.
pub fn select_indices(
    l: usize,
    method: Selection,
    timestamps: &[i64],
    now: i64,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let n = timestamps.len();
    if l > n {
        return Err(Error::Invalid(format!("cannot select {l} of {n} items")));
    }
    if l == n {
        return Ok((0..n).collect());
    }
    let ages: Vec<f64> = timestamps.iter().map(|&t| (now - t).max(0) as f64).collect();
    let mut picked = match method {
        Selection::Greedy => {
            let mut order: Vec<usize> = (0..n).collect();
            // youngest first, later positions win ties
            order.sort_by(|&a, &b| ages[a].total_cmp(&ages[b]).then(b.cmp(&a)));
            order.truncate(l);
            order
        }
        Selection::Random => index::sample(rng, n, l).into_vec(),
        Selection::FeatureWeighted => {
            let total: f64 = ages.iter().sum();
            let mut weights: Vec<f64> = if total > 0.0 {
                ages.iter().map(|a| (1.0 - a / total).max(0.0)).collect()
            } else {
                vec![1.0; n]
            };
            let mut out = Vec::with_capacity(l);
            for _ in 0..l {
                let mass: f64 = weights.iter().sum();
                let choice = if mass > 0.0 {
                    let mut r = rng.random::<f64>() * mass;
                    let mut c = None;
                    for (i, &w) in weights.iter().enumerate() {
                        if w > 0.0 {
                            c = Some(i);
                            if r < w {
                                break;
                            }
                            r -= w;
                        }
                    }
                    c.expect("positive mass has a positive weight")
                } else {
                    // all remaining weights clamped to zero: fall back to uniform
                    let rest: Vec<usize> = (0..n).filter(|i| !out.contains(i)).collect();
                    rest[rng.random_range(0..rest.len())]
                };
                weights[choice] = 0.0;
                out.push(choice);
            }
            out
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

/// Keeps `l` items of `seq` in their original order.
pub fn select_subsequence<T: Clone>(
    seq: &[T],
    l: usize,
    method: Selection,
    timestamps: &[i64],
    now: i64,
    rng: &mut impl Rng,
) -> Result<Vec<T>> {
    if seq.len() != timestamps.len() {
        return Err(Error::Shape {
            op: "select_subsequence",
            left: (seq.len(), 1),
            right: (timestamps.len(), 1),
        });
    }
    Ok(select_indices(l, method, timestamps, now, rng)?
        .into_iter()
        .map(|i| seq[i].clone())
        .collect())
}

/// `(1 − mean(n)/N, 1 − mean(n²)/N²)`
pub fn sparsity_metrics(lengths: &[usize], max_len: usize) -> (f64, f64) {
    let hist: Vec<(usize, u64)> = lengths.iter().map(|&n| (n, 1)).collect();
    sparsity_from_histogram(&hist, max_len)
}

pub fn sparsity_from_histogram(hist: &[(usize, u64)], max_len: usize) -> (f64, f64) {
    let m = moments(hist.iter().map(|&(n, c)| (n as f64, (n * n) as f64, c as f64)));
    let nn = max_len as f64;
    (1.0 - m.0 / nn, 1.0 - m.1 / (nn * nn))
}

fn moments(it: impl Iterator<Item = (f64, f64, f64)>) -> (f64, f64) {
    let (mut s1, mut s2, mut w) = (0.0, 0.0, 0.0);
    for (a, b, c) in it {
        s1 += a * c;
        s2 += b * c;
        w += c;
    }
    if w == 0.0 {
        (0.0, 0.0)
    } else {
        (s1 / w, s2 / w)
    }
}

/// Expected sparsity and s2 after truncating to `policy.max_len` and
/// applying stochastic length.
pub fn expected_sparsity(hist: &[(usize, u64)], policy: &SLPolicy) -> (f64, f64) {
    let m = moments(hist.iter().filter(|h| h.0 > 0).map(|&(n, c)| {
        let (a, b) = policy.expected_moments(n.min(policy.max_len));
        (a, b, c as f64)
    }));
    let nn = policy.max_len as f64;
    (1.0 - m.0 / nn, 1.0 - m.1 / (nn * nn))
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HistogramRow {
    pub length: usize,
    pub count: u64,
}

/// Reads a JSON-lines `{length, count}` histogram.
pub fn read_length_histogram(path: &Path) -> Result<Vec<(usize, u64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: HistogramRow = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push((row.length, row.count));
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityCell {
    pub alpha: f64,
    pub max_len: usize,
    pub sparsity: f64,
    pub s2: f64,
}

/// Expected sparsity and s2 for every `(α, N)` pair.
pub fn sparsity_table(hist: &[(usize, u64)], alphas: &[f64], max_lens: &[usize]) -> Result<Vec<SparsityCell>> {
    let mut out = Vec::new();
    for &alpha in alphas {
        for &max_len in max_lens {
            let policy = SLPolicy::new(alpha, max_len, Selection::default())?;
            let (sparsity, s2) = expected_sparsity(hist, &policy);
            out.push(SparsityCell {
                alpha,
                max_len,
                sparsity,
                s2,
            });
        }
    }
    Ok(out)
}

/// Renders a table with one row per α and a sparsity/s2 column pair per N.
pub fn format_sparsity_table(cells: &[SparsityCell], alphas: &[f64], max_lens: &[usize]) -> String {
    let mut s = String::from("alpha");
    for n in max_lens {
        s += &format!(" | N={n:<6} sparsity     s2");
    }
    s.push('\n');
    for &a in alphas {
        s += &format!("{a:5.2}");
        for &n in max_lens {
            if let Some(c) = cells.iter().find(|c| c.alpha == a && c.max_len == n) {
                s += &format!(" | {:>15.1}% {:>5.1}%", 100.0 * c.sparsity, 100.0 * c.s2);
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(alpha: f64, n: usize) -> SLPolicy {
        SLPolicy::new(alpha, n, Selection::FeatureWeighted).unwrap()
    }

    #[test]
    fn thresholds() {
        assert_eq!(policy(1.6, 4096).threshold(), 776);
        assert_eq!(policy(2.0, 300).threshold(), 300);
        assert_eq!(policy(1.7, 1024).threshold(), 362);
        let p = policy(1.6, 4096).keep_full_probability(4096);
        assert!((p - 4096f64.powf(-0.4)).abs() < 1e-15 && (p - 0.0359).abs() < 1e-4);
        assert!(SLPolicy::new(1.0, 10, Selection::Greedy).is_err());
        assert!(SLPolicy::new(2.1, 10, Selection::Greedy).is_err());
        assert!(SLPolicy::new(1.5, 0, Selection::Greedy).is_err());
    }

    #[test]
    fn decisions() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let base = policy(2.0, 64);
        for n in 1..=64 {
            assert_eq!(sl_decide(n, &base, &mut rng).unwrap(), SLDecision::FullSequence);
        }
        let p = policy(1.6, 4096);
        for _ in 0..100 {
            assert_eq!(sl_decide(776, &p, &mut rng).unwrap(), SLDecision::FullSequence);
        }
        assert!(sl_decide(0, &p, &mut rng).is_err());
        assert!(p.keep_full_probability(777) < 1.0);
    }

    #[test]
    fn keep_full_frequency() {
        let p = policy(1.7, 1024);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let trials = 100_000;
        let full = (0..trials)
            .filter(|_| sl_decide(1024, &p, &mut rng).unwrap() == SLDecision::FullSequence)
            .count() as f64;
        let q = 1024f64.powf(1.7) / 1024f64.powi(2);
        let sigma = (trials as f64 * q * (1.0 - q)).sqrt();
        assert!((full - q * trials as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn selections() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let items = ['a', 'b', 'c', 'd'];
        let ts = [1, 2, 3, 4];
        assert_eq!(
            select_subsequence(&items, 2, Selection::Greedy, &ts, 4, &mut rng).unwrap(),
            vec!['c', 'd']
        );
        for m in [Selection::Greedy, Selection::Random, Selection::FeatureWeighted] {
            assert_eq!(select_subsequence(&items, 4, m, &ts, 4, &mut rng).unwrap(), items);
            assert!(select_subsequence(&items, 5, m, &ts, 4, &mut rng).is_err());
        }
    }

    #[test]
    fn feature_weighted_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // ages 1 and 3 give weights 0.75 and 0.25
        let trials = 100_000;
        let first = (0..trials)
            .filter(|_| {
                select_indices(1, Selection::FeatureWeighted, &[3, 1], 4, &mut rng).unwrap() == [0]
            })
            .count() as f64;
        let sigma = (trials as f64 * 0.75 * 0.25).sqrt();
        assert!((first - 0.75 * trials as f64).abs() < 3.0 * sigma, "{first}");
    }

    #[test]
    fn sparsity_examples() {
        assert_eq!(sparsity_metrics(&[8, 8, 8], 8), (0.0, 0.0));
        assert_eq!(sparsity_metrics(&[4, 4], 8), (0.5, 0.75));
        assert_eq!(sparsity_metrics(&[8, 4], 8), (0.25, 0.375));
    }

    #[test]
    fn histogram_report() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.jsonl");
        std::fs::write(&p, "{\"length\": 1024, \"count\": 3}\n\n{\"length\": 10, \"count\": 1}\n").unwrap();
        let h = read_length_histogram(&p).unwrap();
        assert_eq!(h, vec![(1024, 3), (10, 1)]);
        let cells = sparsity_table(&h, &[1.6, 2.0], &[1024]).unwrap();
        assert_eq!(cells.len(), 2);
        let base = sparsity_from_histogram(&h, 1024);
        assert!((cells[1].sparsity - base.0).abs() < 1e-12);
        assert!(cells[0].sparsity > cells[1].sparsity);
        let text = format_sparsity_table(&cells, &[1.6, 2.0], &[1024]);
        assert_eq!(text.lines().count(), 3);
    }

    proptest! {
        #[test]
        fn selection_keeps_order_and_size(
            ts in prop::collection::vec(0i64..1000, 1..40),
            frac in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let l = (frac * ts.len() as f64) as usize;
            let now = ts.iter().copied().max().unwrap();
            for m in [Selection::Greedy, Selection::Random, Selection::FeatureWeighted] {
                let idx = select_indices(l, m, &ts, now, &mut rng).unwrap();
                prop_assert_eq!(idx.len(), l);
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(idx.iter().all(|&i| i < ts.len()));
            }
        }

        #[test]
        fn sparsity_scale_invariant(lengths in prop::collection::vec(0usize..50, 1..20), k in 1usize..9) {
            let (a, b) = sparsity_metrics(&lengths, 50);
            let scaled: Vec<usize> = lengths.iter().map(|n| n * k).collect();
            let (c, d) = sparsity_metrics(&scaled, 50 * k);
            prop_assert!((a - c).abs() < 1e-12 && (b - d).abs() < 1e-12);
        }

        #[test]
        fn expected_cost_bound(
            lengths in prop::collection::vec(1usize..=512, 1..50),
            alpha in 1.01f64..=2.0,
        ) {
            let p = policy(alpha, 512);
            let l = p.threshold();
            let nalpha = 512f64.powf(alpha);
            let (mut cost, mut long, mut short) = (0.0, 0.0, 0.0);
            for &n in &lengths {
                cost += p.expected_moments(n).1;
                if n > l { long += 1.0 } else { short += (n * n) as f64 }
            }
            // kept-whole part alone contributes N^α per long history; the
            // truncated part adds at most L*² ≤ N^α more
            prop_assert!(cost <= 2.0 * nalpha * long + short + 1e-6);
            for &n in lengths.iter().filter(|&&n| n > l) {
                let q = p.keep_full_probability(n);
                let direct = q * (n * n) as f64 + (1.0 - q) * (l * l) as f64;
                prop_assert!((p.expected_moments(n).1 - direct).abs() < 1e-6);
            }
        }
    }
}
