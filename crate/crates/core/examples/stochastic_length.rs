//! Stochastic Length: per-history keep-or-subsample decisions and the
//! resulting attention sparsity.

use genrec::stochastic_length::{
    format_sparsity_table, select_subsequence, sl_decide, sparsity_table, SLDecision, SLPolicy, Selection,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> genrec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = SLPolicy::new(1.6, 4096, Selection::FeatureWeighted)?;
    println!("alpha 1.6, N 4096: histories beyond {} may be subsampled", policy.threshold());

    let n = 3000;
    let items: Vec<u64> = (0..n as u64).collect();
    let ts: Vec<i64> = (0..n as i64).map(|i| i * 60).collect();
    match sl_decide(n, &policy, &mut rng)? {
        SLDecision::FullSequence => println!("kept all {n} items"),
        SLDecision::Subsample(l) => {
            let kept = select_subsequence(&items, l, policy.selection, &ts, n as i64 * 60, &mut rng)?;
            println!("kept {} of {n}, most recent {:?}", kept.len(), &kept[kept.len() - 3..]);
        }
    }

    // a toy length distribution
    let hist: Vec<(usize, u64)> = vec![(100, 500), (800, 300), (3000, 150), (8000, 50)];
    let alphas = [1.6, 1.8, 2.0];
    let max_lens = [1024, 4096, 8192];
    let cells = sparsity_table(&hist, &alphas, &max_lens)?;
    print!("{}", format_sparsity_table(&cells, &alphas, &max_lens));
    Ok(())
}
