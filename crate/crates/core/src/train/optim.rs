//! Elementwise AdamW for dense parameters.

use crate::embedding::AdamWConfig;
use crate::numeric::{Matrix, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct DenseAdamW<T: Scalar> {
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    step: u64,
}

impl<T: Scalar> DenseAdamW<T> {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let (m, v) = shapes
            .into_iter()
            .map(|(r, c)| (Matrix::zeros(r, c), Matrix::zeros(r, c)))
            .unzip();
        Self { m, v, step: 0 }
    }

    /// Two state scalars per parameter.
    pub fn state_len(&self) -> usize {
        self.m.iter().chain(&self.v).map(|x| x.len()).sum()
    }

    pub fn step(&mut self, params: Vec<&mut Matrix<T>>, grads: &[Matrix<T>], cfg: &AdamWConfig) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Invalid(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adamw",
                    left: g.shape(),
                    right: self.m[i].shape(),
                });
            }
            if !g.all_finite() {
                return Err(Error::NonFinite(format!("gradient of dense tensor {i}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let one = T::one();
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let (c1, c2) = (one - b1.powi(t), one - b2.powi(t));
        let (lr, eps, wd) = (T::of(cfg.lr), T::of(cfg.eps), T::of(cfg.weight_decay));
        for (i, p) in params.into_iter().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let upd = (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                *w = *w - lr * (upd + wd * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{EmbeddingTable, SparseRows};

    #[test]
    fn matches_rowwise_for_scalars() {
        // a one-column table row is a scalar, where both optimizers coincide
        let cfg = AdamWConfig {
            lr: 0.05,
            weight_decay: 0.01,
            ..AdamWConfig::default()
        };
        let mut dense = DenseAdamW::<f64>::new([(1, 1)]);
        let mut w = Matrix::scalar(0.7);
        let mut table = EmbeddingTable::from_weights(Matrix::scalar(0.7));
        for g in [0.3, -1.2, 0.05, 2.0] {
            dense.step(vec![&mut w], &[Matrix::scalar(g)], &cfg).unwrap();
            let mut s = SparseRows::new();
            s.add(0, &[g]);
            table.rowwise_adamw_step(&s, &cfg).unwrap();
            assert!((w.get(0, 0) - table.weights().get(0, 0)).abs() < 1e-15);
        }
        assert_eq!(dense.state_len(), 2);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamWConfig {
            lr: 0.1,
            ..AdamWConfig::default()
        };
        let mut opt = DenseAdamW::<f64>::new([(1, 2)]);
        let mut w = Matrix::row_vector(vec![0.0, 1.0]);
        opt.step(vec![&mut w], &[Matrix::row_vector(vec![2.0, -3.0])], &cfg).unwrap();
        assert!((w.get(0, 0) + 0.1).abs() < 1e-8 && (w.get(0, 1) - 1.1).abs() < 1e-8);
        let bad = Matrix::row_vector(vec![f64::NAN, 0.0]);
        assert!(matches!(opt.step(vec![&mut w], &[bad], &cfg), Err(Error::NonFinite(_))));
    }
}
