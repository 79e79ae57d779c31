//! Encoding a jagged batch with pointwise and softmax attention, plus the
//! per-token activation footprint of each layer type.

use genrec::hstu::{
    encode, estimate_activation_floats, Arch, AttentionKind, EncoderParams, HstuConfig, JaggedBatch, MaskKind,
};
use genrec::numeric::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> genrec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = HstuConfig {
        d_model: 16,
        num_heads: 2,
        d_qk: 8,
        d_v: 8,
        num_layers: 2,
        max_seq_len: 32,
        ..HstuConfig::default()
    };
    let seqs: Vec<(Matrix<f64>, Vec<i64>)> = [5usize, 12, 1]
        .iter()
        .map(|&n| {
            let x = Matrix::from_fn(n, cfg.d_model, |_, _| rng.random_range(-1.0..1.0));
            let ts = (0..n as i64).map(|i| 1_700_000_000 + 3600 * i).collect();
            (x, ts)
        })
        .collect();
    let batch = JaggedBatch::from_sequences(&seqs)?;

    for attention in [AttentionKind::Pointwise, AttentionKind::Softmax] {
        let cfg = HstuConfig { attention, ..cfg.clone() };
        let params = EncoderParams::init(&cfg, &mut rng);
        let y = encode(&cfg, &params, &batch, &MaskKind::Causal)?;
        println!("{attention:?}: output {}x{}, first row {:.3?}", y.rows(), y.cols(), &y.row(0)[..4]);
    }

    for arch in [Arch::Hstu, Arch::Transformer] {
        let c = HstuConfig { arch, ..cfg.clone() };
        println!("{arch:?}: {} floats per token per layer", estimate_activation_floats(&c));
    }
    Ok(())
}
