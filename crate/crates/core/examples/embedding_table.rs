//! A hashed embedding table with row-wise AdamW on the touched rows only.

use genrec::embedding::{hash_id, AdamWConfig, EmbeddingTable, SparseRows};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> genrec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut table: EmbeddingTable<f64> = EmbeddingTable::random(1024, 8, 0.1, &mut rng);

    let ids = [3u64, 10_000_019, 42];
    for id in ids {
        println!("item {id:>9} -> row {}", hash_id(id, table.num_rows()));
    }
    let batch = table.lookup(&ids);
    println!("looked up a {}x{} block", batch.rows(), batch.cols());

    // push every looked-up row towards zero
    let rows = table.take_touched();
    let mut grads = SparseRows::new();
    for &r in &rows {
        let g: Vec<f64> = table.weights().row(r).to_vec();
        grads.add(r, &g);
    }
    let before: f64 = table.row(42).iter().map(|v| v * v).sum();
    table.rowwise_adamw_step(&grads, &AdamWConfig::default())?;
    let after: f64 = table.row(42).iter().map(|v| v * v).sum();
    println!("|row(42)|^2 {before:.5} -> {after:.5} after one step on {} rows", rows.len());
    println!("optimizer state holds {} scalars", table.optimizer_state_len());
    Ok(())
}
