//! Streaming Dirichlet-process records over a growing item vocabulary.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DPConfig {
    pub num_items: usize,
    pub num_categories: usize,
    pub num_records: usize,
    pub record_length: usize,
    pub train_fraction: f64,
    pub initial_available_fraction: f64,
    pub categories_per_record_max: usize,
    pub alpha_range: (f64, f64),
    pub seed: u64,
}

impl Default for DPConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl DPConfig {
    pub fn desk() -> Self {
        Self {
            num_items: 2000,
            num_categories: 20,
            num_records: 50_000,
            record_length: 64,
            train_fraction: 0.9,
            initial_available_fraction: 0.4,
            categories_per_record_max: 5,
            alpha_range: (1.0, 500.0),
            seed: 0,
        }
    }

    pub fn full() -> Self {
        Self {
            num_items: 20_000,
            num_categories: 100,
            num_records: 1_000_000,
            record_length: 128,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("num_items", self.num_items),
            ("num_categories", self.num_categories),
            ("num_records", self.num_records),
            ("record_length", self.record_length),
            ("categories_per_record_max", self.categories_per_record_max),
        ] {
            if v == 0 {
                return Err(Error::config(name, "must be at least 1"));
            }
        }
        for (name, v) in [
            ("train_fraction", self.train_fraction),
            ("initial_available_fraction", self.initial_available_fraction),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(name, format!("{v} is outside (0, 1]")));
            }
        }
        let (lo, hi) = self.alpha_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::config("alpha_range", format!("({lo}, {hi}) is not a positive range")));
        }
        Ok(())
    }

    /// Exclusive upper bound on item ids sampleable at record `r`.
    pub fn available_items(&self, r: usize) -> usize {
        let f = self.initial_available_fraction
            + (1.0 - self.initial_available_fraction) * r as f64 / self.num_records as f64;
        // integer arithmetic when the fraction is a whole percentage keeps the
        // bound exact at round values
        let exact = f * self.num_items as f64;
        let r = exact.round();
        let bound = if (exact - r).abs() < 1e-6 { r } else { exact.floor() };
        (bound as usize).clamp(1, self.num_items)
    }

    pub fn num_train(&self) -> usize {
        train_len(self.num_records, self.train_fraction)
    }
}

fn train_len(n: usize, fraction: f64) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// One generated record with the latent draws that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DPRecord {
    pub items: Vec<u64>,
    pub categories: Vec<usize>,
    pub alpha: f64,
    /// `(category, probability)` pairs of the record's prior.
    pub prior: Vec<(usize, f64)>,
}

/// Generates records in order; availability depends on the record index.
pub struct DPGenerator {
    cfg: DPConfig,
    rng: ChaCha8Rng,
    /// Item ids of each category, ascending.
    by_category: Vec<Vec<u64>>,
    next: usize,
}

impl DPGenerator {
    pub fn new(cfg: DPConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut by_category = vec![Vec::new(); cfg.num_categories];
        for item in 0..cfg.num_items as u64 {
            by_category[rng.random_range(0..cfg.num_categories)].push(item);
        }
        Ok(Self {
            cfg,
            rng,
            by_category,
            next: 0,
        })
    }

    pub fn config(&self) -> &DPConfig {
        &self.cfg
    }

    pub fn category_of(&self, item: u64) -> Option<usize> {
        self.by_category.iter().position(|c| c.binary_search(&item).is_ok())
    }

    /// Draws a record at index `r` with a given concentration.
    pub fn sample_record(&mut self, r: usize, alpha: f64) -> DPRecord {
        let cfg = &self.cfg;
        let bound = cfg.available_items(r) as u64;
        let avail: Vec<usize> = self
            .by_category
            .iter()
            .map(|c| c.partition_point(|&i| i < bound))
            .collect();
        let open: Vec<usize> = (0..cfg.num_categories).filter(|&c| avail[c] > 0).collect();
        let k = self.rng.random_range(1..=cfg.categories_per_record_max.min(open.len()));
        let mut chosen: Vec<usize> = index::sample(&mut self.rng, open.len(), k)
            .into_iter()
            .map(|i| open[i])
            .collect();
        chosen.sort_unstable();
        let raw: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut self.rng)).collect();
        let total: f64 = raw.iter().sum();
        let prior: Vec<(usize, f64)> = chosen.iter().zip(&raw).map(|(&c, &w)| (c, w / total)).collect();

        let mut counts = vec![0usize; k];
        let mut categories = Vec::with_capacity(cfg.record_length);
        let mut items = Vec::with_capacity(cfg.record_length);
        for n in 0..cfg.record_length {
            // n previous draws: fresh draw with probability α/(α + n)
            let slot = if self.rng.random::<f64>() * (alpha + n as f64) < alpha {
                let mut u = self.rng.random::<f64>();
                let mut s = k - 1;
                for (i, &(_, p)) in prior.iter().enumerate() {
                    if u < p {
                        s = i;
                        break;
                    }
                    u -= p;
                }
                s
            } else {
                let mut u = self.rng.random_range(0..n);
                let mut s = 0;
                for (i, &c) in counts.iter().enumerate() {
                    if u < c {
                        s = i;
                        break;
                    }
                    u -= c;
                }
                s
            };
            counts[slot] += 1;
            let c = chosen[slot];
            categories.push(c);
            items.push(self.by_category[c][self.rng.random_range(0..avail[c])]);
        }
        DPRecord {
            items,
            categories,
            alpha,
            prior,
        }
    }
}

impl Iterator for DPGenerator {
    type Item = DPRecord;

    fn next(&mut self) -> Option<DPRecord> {
        if self.next >= self.cfg.num_records {
            return None;
        }
        let (lo, hi) = self.cfg.alpha_range;
        let alpha = if hi > lo { self.rng.random_range(lo..hi) } else { lo };
        let r = self.next;
        self.next += 1;
        Some(self.sample_record(r, alpha))
    }
}

/// All item lists of a dataset, in record order.
pub fn generate_dp_dataset(cfg: &DPConfig) -> Result<Vec<Vec<u64>>> {
    Ok(DPGenerator::new(cfg.clone())?.map(|r| r.items).collect())
}

/// Prefix/suffix split at `floor(fraction · len)`.
pub fn split_train_test<T>(mut records: Vec<T>, fraction: f64) -> Result<(Vec<T>, Vec<T>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("train_fraction", format!("{fraction} is outside (0, 1]")));
    }
    let test = records.split_off(train_len(records.len(), fraction));
    Ok((records, test))
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    items: Vec<u64>,
}

/// Streams a dataset to JSON lines with the config echoed on a `#` header.
/// Returns the SHA-256 of the written bytes.
pub fn write_dp_dataset(cfg: &DPConfig, path: &Path) -> Result<String> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = HashingWriter {
        inner: BufWriter::new(f),
        hash: Sha256::new(),
    };
    let io = |e| Error::io(path, e);
    writeln!(w, "# {}", serde_json::to_string(cfg)?).map_err(io)?;
    for rec in DPGenerator::new(cfg.clone())? {
        serde_json::to_writer(&mut w, &RecordLine { items: rec.items })?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(hex(&w.hash.finalize()))
}

/// Reads a dataset written by [`write_dp_dataset`]; the header config is
/// returned when present.
pub fn read_dp_dataset(path: &Path) -> Result<(Option<DPConfig>, Vec<Vec<u64>>)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let (mut cfg, mut records) = (None, Vec::new());
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let bad = |e: serde_json::Error| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        };
        if let Some(h) = line.strip_prefix('#') {
            if i == 0 {
                cfg = Some(serde_json::from_str(h.trim()).map_err(bad)?);
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str::<RecordLine>(&line).map_err(bad)?.items);
    }
    Ok((cfg, records))
}

/// Hex SHA-256 of a file's contents.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex(&Sha256::digest(&bytes)))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

struct HashingWriter<W> {
    inner: W,
    hash: Sha256,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hash.update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}
