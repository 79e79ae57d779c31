//! Relative attention bias from position offsets and timestamp gaps.

use super::config::RabConfig;
use crate::numeric::{Mask, Matrix, Scalar};

/// Index into the positional table for offset `i − j`, clamped to `±(B − 1)`.
pub fn position_index(pos_i: usize, pos_j: usize, buckets: usize) -> usize {
    let limit = buckets as i64 - 1;
    let offset = (pos_i as i64 - pos_j as i64).clamp(-limit, limit);
    (offset + limit) as usize
}

/// `floor(log2(Δ))` for positive gaps, clamped to the last bucket; gaps of
/// zero or less (and of one second) land in bucket 0.
pub fn time_bucket(delta: i64, buckets: usize) -> usize {
    if delta <= 0 {
        return 0;
    }
    let b = 63 - (delta as u64).leading_zeros() as usize;
    b.min(buckets - 1)
}

/// Query or key coordinates used to look up bias entries.
#[derive(Debug, Clone, Copy)]
pub struct Coords<'a> {
    pub positions: &'a [usize],
    pub timestamps: &'a [i64],
}

/// Flat row-major table indices for each enabled bias component, `None` at
/// masked entries.
pub(crate) struct RabIndex {
    pub pos: Option<Vec<Option<usize>>>,
    pub time: Option<Vec<Option<usize>>>,
}

pub(crate) fn rab_index(cfg: &RabConfig, q: Coords, k: Coords, mask: &Mask) -> RabIndex {
    let build = |f: &dyn Fn(usize, usize) -> usize| {
        let mut out = Vec::with_capacity(mask.rows() * mask.cols());
        for i in 0..mask.rows() {
            let allow = mask.row(i);
            for (j, &a) in allow.iter().enumerate() {
                out.push(a.then(|| f(i, j)));
            }
        }
        out
    };
    let pos = cfg.positional.then(|| {
        build(&|i, j| position_index(q.positions[i], k.positions[j], cfg.num_position_buckets))
    });
    let time = cfg.temporal.then(|| {
        build(&|i, j| time_bucket(q.timestamps[i] - k.timestamps[j], cfg.num_time_buckets))
    });
    RabIndex { pos, time }
}

/// Dense bias matrix `bias[i][j] = pos[clamp(i−j)] + time[bucket(t_i − t_j)]`
/// over enabled components, for all `(i, j)` pairs.
pub fn compute_rab<T: Scalar>(
    cfg: &RabConfig,
    q: Coords,
    k: Coords,
    pos_table: &[T],
    time_table: &[T],
) -> Matrix<T> {
    Matrix::from_fn(q.positions.len(), k.positions.len(), |i, j| {
        let mut b = T::zero();
        if cfg.positional {
            b += pos_table[position_index(q.positions[i], k.positions[j], cfg.num_position_buckets)];
        }
        if cfg.temporal {
            b += time_table[time_bucket(q.timestamps[i] - k.timestamps[j], cfg.num_time_buckets)];
        }
        b
    })
}
