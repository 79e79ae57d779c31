//! Layer stacks over ragged batches.

use std::sync::Arc;

use super::attention::attend;
use super::config::HstuConfig;
use super::layer::{finish, project};
use super::params::EncoderParams;
use super::rab::Coords;
use crate::mfalcon::build_mfalcon_mask;
use crate::numeric::{Mask, Matrix, Scalar, Tape, Var};
use crate::{Error, Result};

/// Which keys each query may see within one sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskKind {
    Causal,
    /// `prefix` history tokens followed by `bm` candidates that see the
    /// history and themselves only. Candidates share position `prefix`.
    MFalcon { prefix: usize, bm: usize },
    /// A fixed mask; every sequence in the batch must match its size.
    Explicit(Mask),
}

/// Variable-length sequences stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct JaggedBatch<T: Scalar = f64> {
    /// `B + 1` nondecreasing indices; sequence `s` owns rows `offsets[s]..offsets[s+1]`.
    pub offsets: Vec<usize>,
    pub tokens: Matrix<T>,
    pub timestamps: Vec<i64>,
}

impl<T: Scalar> JaggedBatch<T> {
    pub fn new(offsets: Vec<usize>, tokens: Matrix<T>, timestamps: Vec<i64>) -> Result<Self> {
        check_offsets(&offsets, tokens.rows())?;
        if timestamps.len() != tokens.rows() {
            return Err(Error::Invalid(format!(
                "{} timestamps for {} tokens",
                timestamps.len(),
                tokens.rows()
            )));
        }
        Ok(Self {
            offsets,
            tokens,
            timestamps,
        })
    }

    pub fn from_sequences(seqs: &[(Matrix<T>, Vec<i64>)]) -> Result<Self> {
        let mut offsets = vec![0];
        let mut ts = Vec::new();
        for (m, t) in seqs {
            offsets.push(offsets.last().unwrap() + m.rows());
            ts.extend_from_slice(t);
        }
        let mats: Vec<&Matrix<T>> = seqs.iter().map(|(m, _)| m).collect();
        let tokens = if mats.is_empty() {
            Matrix::zeros(0, 0)
        } else {
            Matrix::vcat(&mats)?
        };
        Self::new(offsets, tokens, ts)
    }

    pub fn num_sequences(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn sequence(&self, s: usize) -> Matrix<T> {
        let (a, b) = (self.offsets[s], self.offsets[s + 1]);
        self.tokens.slice_rows(a, b - a)
    }
}

fn check_offsets(offsets: &[usize], total: usize) -> Result<()> {
    if offsets.first() != Some(&0)
        || offsets.last() != Some(&total)
        || offsets.windows(2).any(|w| w[0] > w[1])
    {
        return Err(Error::Invalid(format!(
            "offsets must start at 0, be nondecreasing and end at {total}"
        )));
    }
    Ok(())
}

/// Everything about a batch except the token values.
#[derive(Debug, Clone)]
pub struct Layout {
    pub offsets: Vec<usize>,
    pub positions: Vec<usize>,
    pub timestamps: Vec<i64>,
    pub masks: Vec<Arc<Mask>>,
}

impl Layout {
    pub fn new(offsets: Vec<usize>, timestamps: Vec<i64>, kind: &MaskKind) -> Result<Self> {
        let total = timestamps.len();
        check_offsets(&offsets, total)?;
        let mut positions = Vec::with_capacity(total);
        let mut masks = Vec::with_capacity(offsets.len() - 1);
        for w in offsets.windows(2) {
            let n = w[1] - w[0];
            let mask = match kind {
                MaskKind::Causal => {
                    positions.extend(0..n);
                    Mask::causal(n)
                }
                MaskKind::MFalcon { prefix, bm } => {
                    if prefix + bm != n {
                        return Err(Error::Invalid(format!(
                            "sequence of {n} tokens does not hold {prefix} history tokens and {bm} candidates"
                        )));
                    }
                    positions.extend((0..n).map(|i| i.min(*prefix)));
                    build_mfalcon_mask(*prefix, *bm)
                }
                MaskKind::Explicit(m) => {
                    if (m.rows(), m.cols()) != (n, n) {
                        return Err(Error::Shape {
                            op: "explicit mask",
                            left: (m.rows(), m.cols()),
                            right: (n, n),
                        });
                    }
                    positions.extend(0..n);
                    m.clone()
                }
            };
            masks.push(Arc::new(mask));
        }
        Ok(Self {
            offsets,
            positions,
            timestamps,
            masks,
        })
    }

    pub fn for_batch<T: Scalar>(batch: &JaggedBatch<T>, kind: &MaskKind) -> Result<Self> {
        Self::new(batch.offsets.clone(), batch.timestamps.clone(), kind)
    }

    pub fn num_sequences(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn total(&self) -> usize {
        self.timestamps.len()
    }

    pub fn coords(&self, s: usize) -> Coords<'_> {
        let (a, b) = (self.offsets[s], self.offsets[s + 1]);
        Coords {
            positions: &self.positions[a..b],
            timestamps: &self.timestamps[a..b],
        }
    }
}

pub struct EncoderOutput {
    pub y: Var,
    /// Per layer, keys for every token (`total × h·d_qk`).
    pub keys: Vec<Var>,
    /// Per layer, values for every token (`total × h·d_v`).
    pub values: Vec<Var>,
}

/// Runs the layer stack on `x` (`total × d`). Sequences never attend to each other.
pub fn forward_encoder<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &HstuConfig,
    params: &EncoderParams<Var>,
    x: Var,
    layout: &Layout,
) -> Result<EncoderOutput> {
    let (rows, cols) = tape.shape(x);
    if rows != layout.total() || cols != cfg.d_model {
        return Err(Error::Shape {
            op: "forward_encoder",
            left: (rows, cols),
            right: (layout.total(), cfg.d_model),
        });
    }
    let mut x = x;
    let mut keys = Vec::with_capacity(params.layers.len());
    let mut values = Vec::with_capacity(params.layers.len());
    let single = layout.num_sequences() == 1;
    for layer in &params.layers {
        let tables = {
            let (p, t) = layer.rab_tables();
            (*p, *t)
        };
        let proj = project(tape, cfg, layer, x)?;
        let mut pooled = Vec::with_capacity(layout.num_sequences());
        for s in 0..layout.num_sequences() {
            let (a, b) = (layout.offsets[s], layout.offsets[s + 1]);
            if a == b {
                continue;
            }
            let (q, k, v) = if single {
                (proj.q, proj.k, proj.v)
            } else {
                (
                    tape.slice_rows(proj.q, a, b - a),
                    tape.slice_rows(proj.k, a, b - a),
                    tape.slice_rows(proj.v, a, b - a),
                )
            };
            let c = layout.coords(s);
            pooled.push(attend(tape, cfg, tables, q, k, v, c, c, &layout.masks[s])?);
        }
        let av = if pooled.is_empty() {
            tape.constant(Matrix::zeros(0, cfg.v_width()))
        } else {
            tape.concat_rows(&pooled)?
        };
        x = finish(tape, cfg, layer, x, &proj, av)?;
        keys.push(proj.k);
        values.push(proj.v);
    }
    Ok(EncoderOutput { y: x, keys, values })
}

/// Forward pass on plain matrices without gradient tracking.
pub fn encode<T: Scalar>(
    cfg: &HstuConfig,
    params: &EncoderParams<Matrix<T>>,
    batch: &JaggedBatch<T>,
    mask: &MaskKind,
) -> Result<Matrix<T>> {
    let layout = Layout::for_batch(batch, mask)?;
    let mut tape = Tape::new();
    let bound = params.map(|m| tape.constant(m.clone()));
    let x = tape.constant(batch.tokens.clone());
    let out = forward_encoder(&mut tape, cfg, &bound, x, &layout)?;
    Ok(tape.value(out.y).clone())
}

/// One layer applied to a single sequence.
pub fn layer_forward<T: Scalar>(
    cfg: &HstuConfig,
    layer: &super::LayerParams<Matrix<T>>,
    x: &Matrix<T>,
    timestamps: &[i64],
    mask: &MaskKind,
) -> Result<Matrix<T>> {
    let params = EncoderParams {
        layers: vec![layer.clone()],
    };
    let batch = JaggedBatch::new(vec![0, x.rows()], x.clone(), timestamps.to_vec())?;
    encode(cfg, &params, &batch, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hstu::{Arch, LayerParams, RabConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(arch: Arch) -> HstuConfig {
        HstuConfig {
            d_model: 4,
            num_heads: 2,
            d_qk: 2,
            d_v: 3,
            num_layers: 2,
            max_seq_len: 16,
            arch,
            rab: RabConfig {
                num_position_buckets: 6,
                num_time_buckets: 8,
                ..RabConfig::default()
            },
            ..HstuConfig::default()
        }
    }

    fn random_tables(p: &mut EncoderParams<Matrix<f64>>, rng: &mut ChaCha8Rng) {
        use rand::Rng;
        for l in &mut p.layers {
            let n = l.fields().len();
            for (i, f) in l.fields_mut().into_iter().enumerate() {
                if i >= n - 2 {
                    *f = Matrix::from_fn(f.rows(), f.cols(), |_, _| rng.random_range(-0.5..0.5));
                }
            }
        }
    }

    fn tokens(n: usize, seed: u64) -> (Matrix<f64>, Vec<i64>) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
        let mut t = 1000i64;
        let ts = (0..n)
            .map(|_| {
                t += rng.random_range(0..5000);
                t
            })
            .collect();
        (x, ts)
    }

    #[test]
    fn no_layers_is_identity() {
        let c = HstuConfig {
            num_layers: 0,
            ..cfg(Arch::Hstu)
        };
        let p = EncoderParams::<Matrix<f64>>::zeros(&c);
        let (x, ts) = tokens(5, 1);
        let b = JaggedBatch::new(vec![0, 5], x.clone(), ts).unwrap();
        assert_eq!(encode(&c, &p, &b, &MaskKind::Causal).unwrap(), x);
    }

    #[test]
    fn zero_output_weights_are_identity() {
        let c = cfg(Arch::Hstu);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = EncoderParams::<Matrix<f64>>::init(&c, &mut rng);
        for l in &mut p.layers {
            if let LayerParams::Hstu(h) = l {
                h.w2 = Matrix::zeros(h.w2.rows(), h.w2.cols());
            }
        }
        let (x, ts) = tokens(6, 3);
        let y = layer_forward(&c, &p.layers[0], &x, &ts, &MaskKind::Causal).unwrap();
        assert_eq!(y, x);

        // a closed gate leaves only the output bias
        if let LayerParams::Hstu(h) = &mut p.layers[0] {
            h.w2 = Matrix::filled(h.w2.rows(), h.w2.cols(), 0.3);
            h.b2 = Matrix::row_vector(vec![0.1, -0.2, 0.3, 0.0]);
            let w1 = h.w1.clone();
            // U occupies the first h·d_v columns
            h.w1 = Matrix::from_fn(w1.rows(), w1.cols(), |i, j| {
                if j < c.v_width() {
                    0.0
                } else {
                    w1.get(i, j)
                }
            });
        }
        let y = layer_forward(&c, &p.layers[0], &x, &ts, &MaskKind::Causal).unwrap();
        let expected = x.add_row(&Matrix::row_vector(vec![0.1, -0.2, 0.3, 0.0])).unwrap();
        assert!(y.max_abs_diff(&expected) == 0.0);
    }

    #[test]
    fn transformer_zero_weights_are_identity() {
        let c = cfg(Arch::Transformer);
        let p = EncoderParams::<Matrix<f64>>::zeros(&c);
        let (x, ts) = tokens(4, 4);
        let b = JaggedBatch::new(vec![0, 4], x.clone(), ts).unwrap();
        assert_eq!(encode(&c, &p, &b, &MaskKind::Causal).unwrap(), x);
    }

    #[test]
    fn batch_equals_separate_calls() {
        for arch in [Arch::Hstu, Arch::Transformer] {
            let c = cfg(arch);
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut p = EncoderParams::<Matrix<f64>>::init(&c, &mut rng);
            random_tables(&mut p, &mut rng);
            let a = tokens(5, 6);
            let b = tokens(3, 7);
            let both = JaggedBatch::from_sequences(&[a.clone(), b.clone()]).unwrap();
            let y = encode(&c, &p, &both, &MaskKind::Causal).unwrap();
            let ya = encode(&c, &p, &JaggedBatch::from_sequences(&[a]).unwrap(), &MaskKind::Causal)
                .unwrap();
            let yb = encode(&c, &p, &JaggedBatch::from_sequences(&[b]).unwrap(), &MaskKind::Causal)
                .unwrap();
            assert_eq!(y, Matrix::vcat(&[&ya, &yb]).unwrap());
        }
    }

    #[test]
    fn truncation_keeps_prefix_outputs() {
        let c = cfg(Arch::Hstu);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = EncoderParams::<Matrix<f64>>::init(&c, &mut rng);
        random_tables(&mut p, &mut rng);
        let (x, ts) = tokens(9, 9);
        let full = encode(&c, &p, &JaggedBatch::new(vec![0, 9], x.clone(), ts.clone()).unwrap(), &MaskKind::Causal).unwrap();
        for k in 1..9 {
            let part = JaggedBatch::new(vec![0, k], x.slice_rows(0, k), ts[..k].to_vec()).unwrap();
            let y = encode(&c, &p, &part, &MaskKind::Causal).unwrap();
            assert!(y.max_abs_diff(&full.slice_rows(0, k)) < 1e-9);
        }
    }

    #[test]
    fn empty_sequences_are_allowed() {
        let c = cfg(Arch::Hstu);
        let p = EncoderParams::<Matrix<f64>>::init(&c, &mut ChaCha8Rng::seed_from_u64(1));
        let (x, ts) = tokens(3, 2);
        let b = JaggedBatch::new(vec![0, 0, 3, 3], x, ts).unwrap();
        assert_eq!(encode(&c, &p, &b, &MaskKind::Causal).unwrap().rows(), 3);
        assert!(JaggedBatch::new(vec![0, 2, 1], Matrix::<f64>::zeros(1, 4), vec![0]).is_err());
    }
}
