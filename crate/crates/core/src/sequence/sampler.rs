use rand::Rng;
use serde::{Deserialize, Serialize};

/// Emits a user's whole history with probability `min(1, c / n)`.
pub fn generative_emission_sampler(n: usize, c: f64, rng: &mut impl Rng) -> bool {
    assert!(n >= 1, "a history has at least one token");
    let p = (c / n as f64).clamp(0.0, 1.0);
    p >= 1.0 || rng.random::<f64>() < p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    /// One example per impression: every prefix of a history is encoded.
    Impression,
    /// One example per history, emitted at rate `1/n`.
    Generative,
}

/// Encoder cost of a set of histories: `n(n²d + n·d_ff·d)` per history for
/// impression-level training; generative training samples each history at
/// rate `1/n`, leaving `n²d + n·d_ff·d`.
pub fn count_training_flops(lengths: &[usize], d: usize, d_ff: usize, mode: TrainingMode) -> u128 {
    lengths
        .iter()
        .map(|&n| {
            let (n, d, f) = (n as u128, d as u128, d_ff as u128);
            let per_example = n * n * d + n * f * d;
            match mode {
                TrainingMode::Impression => n * per_example,
                TrainingMode::Generative => per_example,
            }
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn emission_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert!((0..1000).all(|_| generative_emission_sampler(1, 1.0, &mut rng)));
        assert!((0..1000).all(|_| !generative_emission_sampler(3, 0.0, &mut rng)));
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| generative_emission_sampler(4, 1.0, &mut rng))
            .count() as f64;
        let sigma = (trials as f64 * 0.25 * 0.75).sqrt();
        assert!((hits - 0.25 * trials as f64).abs() < 3.0 * sigma, "{hits}");
    }

    #[test]
    fn flop_examples() {
        assert_eq!(count_training_flops(&[8], 2, 2, TrainingMode::Impression), 1280);
        assert_eq!(count_training_flops(&[8], 2, 2, TrainingMode::Generative), 160);
        let (d, f) = (3u128, 5u128);
        let imp = count_training_flops(&[2, 4], 3, 5, TrainingMode::Impression);
        assert_eq!(imp, 2 * (4 * d + 2 * f * d) + 4 * (16 * d + 4 * f * d));
        let gen = count_training_flops(&[2, 4], 3, 5, TrainingMode::Generative);
        assert_eq!(gen, (4 * d + 2 * f * d) + (16 * d + 4 * f * d));
    }

    #[test]
    fn ratio_is_length() {
        for n in [1usize, 2, 8, 64, 1000] {
            let i = count_training_flops(&[n], 16, 64, TrainingMode::Impression);
            let g = count_training_flops(&[n], 16, 64, TrainingMode::Generative);
            assert_eq!(i, g * n as u128);
        }
    }
}
