//! Elementwise activations, normalization and masked softmax.

use super::{Matrix, Scalar};
use crate::{Error, Result};

/// Boolean allow-mask over a score matrix; `true` means the entry takes part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    allow: Vec<bool>,
}

impl Mask {
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allow = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                allow.push(f(i, j));
            }
        }
        Self { rows, cols, allow }
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            allow: vec![true; rows * cols],
        }
    }

    /// Lower triangular, diagonal included.
    pub fn causal(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| j <= i)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allow[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.allow[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_count(&self, i: usize) -> usize {
        self.row(i).iter().filter(|&&a| a).count()
    }

    pub fn count_allowed(&self) -> usize {
        self.allow.iter().filter(|&&a| a).count()
    }

    pub fn set(&mut self, i: usize, j: usize, allow: bool) {
        self.allow[i * self.cols + j] = allow;
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn silu_scalar<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

/// d/dx [x σ(x)] = σ(x) (1 + x (1 − σ(x))).
#[inline]
pub fn silu_grad_scalar<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub fn silu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(silu_scalar)
}

const GELU_C: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// tanh approximation of GELU.
#[inline]
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(SQRT_2_OVER_PI);
    let half = T::of(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(SQRT_2_OVER_PI);
    let half = T::of(0.5);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let d_inner = k * (T::one() + T::of(3.0) * c * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * d_inner
}

pub fn gelu<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    x.map(gelu_scalar)
}

/// `(x − mean) / sqrt(var + eps)` with the population variance, written into `out`.
/// Returns `1 / sqrt(var + eps)`.
pub fn layer_norm_into<T: Scalar>(x: &[T], eps: T, out: &mut [T]) -> T {
    let n = T::from_usize(x.len()).expect("length fits");
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv_std = T::one() / (var + eps).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv_std;
    }
    inv_std
}

pub fn layer_norm<T: Scalar>(x: &[T], eps: T) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    layer_norm_into(x, eps, &mut out);
    out
}

/// Row-wise layer norm; returns the normalized matrix and per-row `1/std`.
pub fn layer_norm_rows<T: Scalar>(x: &Matrix<T>, eps: T) -> (Matrix<T>, Vec<T>) {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut inv = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        inv.push(layer_norm_into(x.row(i), eps, out.row_mut(i)));
    }
    (out, inv)
}

/// Softmax over the unmasked entries of each row. Masked entries are exactly
/// zero and a fully masked row is all zeros.
pub fn softmax_rows<T: Scalar>(x: &Matrix<T>, mask: &Mask) -> Result<Matrix<T>> {
    if x.shape() != (mask.rows(), mask.cols()) {
        return Err(Error::Shape {
            op: "softmax_rows",
            left: x.shape(),
            right: (mask.rows(), mask.cols()),
        });
    }
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let row = x.row(i);
        let allow = mask.row(i);
        let max = row
            .iter()
            .zip(allow)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(T::neg_infinity(), T::max);
        if max == T::neg_infinity() {
            continue;
        }
        let o = out.row_mut(i);
        let mut total = T::zero();
        for j in 0..row.len() {
            if allow[j] {
                let e = (row[j] - max).exp();
                o[j] = e;
                total += e;
            }
        }
        for (v, &a) in o.iter_mut().zip(allow) {
            if a {
                *v = *v / total;
            }
        }
    }
    Ok(out)
}

/// `ln Σ exp(x_i)` computed stably.
pub fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let max = xs.clone().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<T>().ln()
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn silu_values() {
        assert_eq!(silu_scalar(0.0f64), 0.0);
        // the gap to the asymptote at 20 is 20·e^-20/(1+e^-20) ≈ 4.12e-8
        let gap = 20.0 - silu_scalar(20.0f64);
        let expected_gap = 20.0 * (-20.0f64).exp() / (1.0 + (-20.0f64).exp());
        assert!((gap - expected_gap).abs() < 1e-14);
        assert!(gap < 5e-8);
        assert!((silu_scalar(40.0f64) - 40.0).abs() < 1e-8);
        // independent scalar evaluation: 1 / (1 + e^-1)
        let oracle = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((silu_scalar(1.0f64) - oracle).abs() < 1e-15);
        assert!((oracle - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn layer_norm_cases() {
        assert_eq!(layer_norm(&[3.0f64, 3.0, 3.0], 1e-5), vec![0.0, 0.0, 0.0]);
        let y = layer_norm(&[1.0f64, -1.0], 1e-14);
        assert!((y[0] - 1.0).abs() < 1e-12 && (y[1] + 1.0).abs() < 1e-12);
        assert_eq!(layer_norm(&[1.0f64, 3.0], 0.0), vec![-1.0, 1.0]);
    }

    #[test]
    fn softmax_cases() {
        let mask = Mask::full(1, 2);
        let p = softmax_rows(&Matrix::<f64>::zeros(1, 2), &mask).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        let p = softmax_rows(&Matrix::<f64>::scalar(7.3), &Mask::full(1, 1)).unwrap();
        assert_eq!(p.data(), &[1.0]);

        let x = Matrix::row_vector(vec![1.0f64.ln(), 3.0f64.ln()]);
        let p = softmax_rows(&x, &mask).unwrap();
        assert!((p.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((p.get(0, 1) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_masked_entries_are_zero() {
        let x = Matrix::<f64>::from_fn(3, 3, |i, j| (i + j) as f64);
        let p = softmax_rows(&x, &Mask::causal(3)).unwrap();
        assert_eq!(p.get(0, 1), 0.0);
        assert_eq!(p.get(0, 0), 1.0);
        let empty = Mask::from_fn(1, 2, |_, _| false);
        let p = softmax_rows(&Matrix::<f64>::zeros(1, 2), &empty).unwrap();
        assert_eq!(p.data(), &[0.0, 0.0]);
    }

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0f64, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8);
            let fd = (silu_scalar(x + h) - silu_scalar(x - h)) / (2.0 * h);
            assert!((fd - silu_grad_scalar(x)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn layer_norm_moments(xs in proptest::collection::vec(-50.0f64..50.0, 2..40)) {
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
            prop_assume!(var > 1e-6);
            let y = layer_norm(&xs, 0.0);
            let ym = y.iter().sum::<f64>() / y.len() as f64;
            let yv = y.iter().map(|v| (v - ym).powi(2)).sum::<f64>() / y.len() as f64;
            prop_assert!(ym.abs() < 1e-10);
            prop_assert!((yv - 1.0).abs() < 1e-9);
        }

        #[test]
        fn softmax_rows_sum_to_one(
            vals in proptest::collection::vec(-30.0f64..30.0, 12),
            bits in proptest::collection::vec(any::<bool>(), 12),
        ) {
            let x = Matrix::new(3, 4, vals).unwrap();
            let mask = Mask::from_fn(3, 4, |i, j| bits[i * 4 + j]);
            let p = softmax_rows(&x, &mask).unwrap();
            for i in 0..3 {
                let s: f64 = p.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12 || p.row(i).iter().all(|&v| v == 0.0));
            }
        }

        #[test]
        fn matmul_associative(
            a in proptest::collection::vec(-2.0f64..2.0, 6),
            b in proptest::collection::vec(-2.0f64..2.0, 12),
            c in proptest::collection::vec(-2.0f64..2.0, 8),
        ) {
            let a = Matrix::new(2, 3, a).unwrap();
            let b = Matrix::new(3, 4, b).unwrap();
            let c = Matrix::new(4, 2, c).unwrap();
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right) < 1e-9);
        }
    }
}
