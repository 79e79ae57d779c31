//! One streaming pass over a small synthetic stream, then HR/NDCG on the
//! held-out tail.

use genrec::hstu::{HstuConfig, RabConfig};
use genrec::model::{Model, ModelConfig};
use genrec::synthetic::{generate_dp_dataset, split_train_test, DPConfig};
use genrec::train::{evaluate, train, Dataset, EvalConfig, EvalTargets, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> genrec::Result<()> {
    let data = DPConfig {
        num_items: 300,
        num_records: 3000,
        record_length: 24,
        ..DPConfig::desk()
    };
    let records = generate_dp_dataset(&data)?;
    let (train_rec, test_rec) = split_train_test(records, data.train_fraction)?;
    let train_set = Dataset::from_records(&train_rec, &data, 0);
    let test_set = Dataset::from_records(&test_rec, &data, train_rec.len());

    let cfg = ModelConfig {
        encoder: HstuConfig {
            d_model: 32,
            num_heads: 2,
            d_qk: 16,
            d_v: 16,
            max_seq_len: 32,
            rab: RabConfig::disabled(),
            ..HstuConfig::default()
        },
        item_rows: 512,
        ..ModelConfig::default()
    };
    let mut model: Model<f32> = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    let tcfg = TrainConfig {
        batch_size: 16,
        num_negatives: 64,
        ..TrainConfig::default()
    };
    let summary = train(&mut model, &train_set, &tcfg)?;
    println!("{} steps, final loss {:?}", summary.steps, summary.final_loss);

    let report = evaluate(
        &model,
        &test_set,
        &EvalConfig {
            ks: vec![1, 10, 50],
            targets: EvalTargets::All,
            ..EvalConfig::default()
        },
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}
