//! Layer parameter sets.
//!
//! Every struct is generic over its field type so the same layout serves as
//! storage (`Matrix<T>`), as tape handles (`Var`) and as gradients. Field
//! order in [`fields`](HstuLayer::fields) is the declaration order and is
//! what checkpoints and optimizers iterate over.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{Arch, HstuConfig};
use crate::numeric::{Matrix, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct HstuLayer<P> {
    /// `d × (2h·d_v + 2h·d_qk)`, output columns ordered U | V | Q | K.
    pub w1: P,
    pub b1: P,
    /// `h·d_v × d`
    pub w2: P,
    pub b2: P,
    /// `1 × (2B − 1)`, shared by all heads.
    pub rab_pos: P,
    /// `1 × num_time_buckets`, shared by all heads.
    pub rab_time: P,
}

impl<P> HstuLayer<P> {
    pub const NAMES: [&'static str; 6] = ["w1", "b1", "w2", "b2", "rab_pos", "rab_time"];

    pub fn fields(&self) -> Vec<&P> {
        vec![
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.rab_pos,
            &self.rab_time,
        ]
    }

    pub fn fields_mut(&mut self) -> Vec<&mut P> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.rab_pos,
            &mut self.rab_time,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = P>) -> Option<Self> {
        Some(Self {
            w1: it.next()?,
            b1: it.next()?,
            w2: it.next()?,
            b2: it.next()?,
            rab_pos: it.next()?,
            rab_time: it.next()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerLayer<P> {
    pub wq: P,
    pub bq: P,
    pub wk: P,
    pub bk: P,
    pub wv: P,
    pub bv: P,
    pub wo: P,
    pub bo: P,
    pub w_ff1: P,
    pub b_ff1: P,
    pub w_ff2: P,
    pub b_ff2: P,
    pub rab_pos: P,
    pub rab_time: P,
}

impl<P> TransformerLayer<P> {
    pub const NAMES: [&'static str; 14] = [
        "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "w_ff1", "b_ff1", "w_ff2", "b_ff2",
        "rab_pos", "rab_time",
    ];

    pub fn fields(&self) -> Vec<&P> {
        vec![
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.w_ff1,
            &self.b_ff1,
            &self.w_ff2,
            &self.b_ff2,
            &self.rab_pos,
            &self.rab_time,
        ]
    }

    pub fn fields_mut(&mut self) -> Vec<&mut P> {
        vec![
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.w_ff1,
            &mut self.b_ff1,
            &mut self.w_ff2,
            &mut self.b_ff2,
            &mut self.rab_pos,
            &mut self.rab_time,
        ]
    }

    fn from_iter(it: &mut impl Iterator<Item = P>) -> Option<Self> {
        Some(Self {
            wq: it.next()?,
            bq: it.next()?,
            wk: it.next()?,
            bk: it.next()?,
            wv: it.next()?,
            bv: it.next()?,
            wo: it.next()?,
            bo: it.next()?,
            w_ff1: it.next()?,
            b_ff1: it.next()?,
            w_ff2: it.next()?,
            b_ff2: it.next()?,
            rab_pos: it.next()?,
            rab_time: it.next()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams<P> {
    Hstu(HstuLayer<P>),
    Transformer(TransformerLayer<P>),
}

impl<P> LayerParams<P> {
    pub fn fields(&self) -> Vec<&P> {
        match self {
            LayerParams::Hstu(l) => l.fields(),
            LayerParams::Transformer(l) => l.fields(),
        }
    }

    pub fn fields_mut(&mut self) -> Vec<&mut P> {
        match self {
            LayerParams::Hstu(l) => l.fields_mut(),
            LayerParams::Transformer(l) => l.fields_mut(),
        }
    }

    pub fn names(&self) -> &'static [&'static str] {
        match self {
            LayerParams::Hstu(_) => &HstuLayer::<P>::NAMES,
            LayerParams::Transformer(_) => &TransformerLayer::<P>::NAMES,
        }
    }

    pub fn map<Q>(&self, f: impl FnMut(&P) -> Q) -> LayerParams<Q> {
        let mut it = self.fields().into_iter().map(f);
        let out = match self {
            LayerParams::Hstu(_) => LayerParams::Hstu(HstuLayer::from_iter(&mut it).unwrap()),
            LayerParams::Transformer(_) => {
                LayerParams::Transformer(TransformerLayer::from_iter(&mut it).unwrap())
            }
        };
        debug_assert!(it.next().is_none());
        out
    }

    pub fn rab_tables(&self) -> (&P, &P) {
        match self {
            LayerParams::Hstu(l) => (&l.rab_pos, &l.rab_time),
            LayerParams::Transformer(l) => (&l.rab_pos, &l.rab_time),
        }
    }
}

/// The parameters of a whole layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<P> {
    pub layers: Vec<LayerParams<P>>,
}

impl<P> EncoderParams<P> {
    pub fn fields(&self) -> Vec<&P> {
        self.layers.iter().flat_map(|l| l.fields()).collect()
    }

    pub fn fields_mut(&mut self) -> Vec<&mut P> {
        self.layers.iter_mut().flat_map(|l| l.fields_mut()).collect()
    }

    pub fn map<Q>(&self, mut f: impl FnMut(&P) -> Q) -> EncoderParams<Q> {
        EncoderParams {
            layers: self.layers.iter().map(|l| l.map(&mut f)).collect(),
        }
    }

    /// Rebuilds a stack with the same layout from values in field order.
    pub fn rebuild<Q>(&self, values: impl IntoIterator<Item = Q>) -> Option<EncoderParams<Q>> {
        let mut it = values.into_iter();
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            layers.push(match l {
                LayerParams::Hstu(_) => LayerParams::Hstu(HstuLayer::from_iter(&mut it)?),
                LayerParams::Transformer(_) => {
                    LayerParams::Transformer(TransformerLayer::from_iter(&mut it)?)
                }
            });
        }
        it.next().is_none().then_some(EncoderParams { layers })
    }
}

/// Expected `(rows, cols)` of every field for one layer of `cfg.arch`.
pub fn layer_shapes(cfg: &HstuConfig) -> Vec<(usize, usize)> {
    let d = cfg.d_model;
    let rab = [
        (1, cfg.rab.position_table_len()),
        (1, cfg.rab.num_time_buckets),
    ];
    let mut shapes = match cfg.arch {
        Arch::Hstu => vec![
            (d, cfg.projection_width()),
            (1, cfg.projection_width()),
            (cfg.v_width(), d),
            (1, d),
        ],
        Arch::Transformer => vec![
            (d, cfg.qk_width()),
            (1, cfg.qk_width()),
            (d, cfg.qk_width()),
            (1, cfg.qk_width()),
            (d, cfg.v_width()),
            (1, cfg.v_width()),
            (cfg.v_width(), d),
            (1, d),
            (d, cfg.d_ff()),
            (1, cfg.d_ff()),
            (cfg.d_ff(), d),
            (1, d),
        ],
    };
    shapes.extend(rab);
    shapes
}

impl<T: Scalar> EncoderParams<Matrix<T>> {
    fn build(cfg: &HstuConfig, mut make: impl FnMut(usize, (usize, usize)) -> Matrix<T>) -> Self {
        let shapes = layer_shapes(cfg);
        let layers = (0..cfg.num_layers)
            .map(|_| {
                let mut it = shapes.iter().enumerate().map(|(i, &s)| make(i, s));
                match cfg.arch {
                    Arch::Hstu => LayerParams::Hstu(HstuLayer::from_iter(&mut it).unwrap()),
                    Arch::Transformer => {
                        LayerParams::Transformer(TransformerLayer::from_iter(&mut it).unwrap())
                    }
                }
            })
            .collect();
        Self { layers }
    }

    /// Weight matrices drawn from `N(0, 1/fan_in)`; biases and bias tables start at zero.
    pub fn init(cfg: &HstuConfig, rng: &mut impl Rng) -> Self {
        let weight_count = layer_shapes(cfg).len() - 2;
        Self::build(cfg, |i, (r, c)| {
            // weights and biases alternate ahead of the two bias tables
            if i < weight_count && i % 2 == 0 {
                let normal = Normal::new(0.0, 1.0 / (r as f64).sqrt()).unwrap();
                Matrix::from_fn(r, c, |_, _| T::of(normal.sample(rng)))
            } else {
                Matrix::zeros(r, c)
            }
        })
    }

    pub fn zeros(cfg: &HstuConfig) -> Self {
        Self::build(cfg, |_, (r, c)| Matrix::zeros(r, c))
    }

    pub fn num_scalars(&self) -> usize {
        self.fields().iter().map(|m| m.len()).sum()
    }

    /// Checks every field against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &HstuConfig) -> crate::Result<()> {
        let expected = layer_shapes(cfg);
        if self.layers.len() != cfg.num_layers {
            return Err(crate::Error::config(
                "num_layers",
                format!("config says {}, parameters have {}", cfg.num_layers, self.layers.len()),
            ));
        }
        for (li, layer) in self.layers.iter().enumerate() {
            let fields = layer.fields();
            if fields.len() != expected.len() {
                return Err(crate::Error::config("arch", format!("layer {li} has the wrong kind")));
            }
            for ((m, &shape), name) in fields.iter().zip(&expected).zip(layer.names()) {
                if m.shape() != shape {
                    return Err(crate::Error::Shape {
                        op: name,
                        left: m.shape(),
                        right: shape,
                    });
                }
            }
        }
        Ok(())
    }
}
