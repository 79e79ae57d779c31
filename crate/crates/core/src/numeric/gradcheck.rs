//! Finite-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::Matrix;
use crate::{Error, Result};

/// Compares analytic gradients of a scalar function against central
/// differences with the given step. Returns the largest
/// `|analytic − numeric| / max(1, |analytic|)` over every parameter entry.
pub fn grad_check<F>(params: &[Matrix<f64>], step: f64, f: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Matrix<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if v.shape() != (1, 1) {
            return Err(Error::Shape {
                op: "grad_check",
                left: v.shape(),
                right: (1, 1),
            });
        }
        let v = v.data()[0];
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[k] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[k];
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::numeric::{FlopKind, Mask};

    fn m(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        // deterministic pseudo-random fill without pulling in an RNG
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Matrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        })
    }

    #[test]
    fn quadratic_is_exact() {
        let err = grad_check(&[Matrix::scalar(3.0)], 1e-5, |t, v| t.mul(v[0], v[0])).unwrap();
        assert!(err < 1e-10);
    }

    #[test]
    fn silu_sum_matches_scalar_derivative() {
        let mut t = Tape::new();
        let w = t.leaf(Matrix::scalar(1.0));
        let s = t.silu(w);
        let y = t.sum(s);
        let g = t.backward(y).unwrap().wrt(w).data()[0];
        let sig = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((g - sig * (1.0 + (1.0 - sig))).abs() < 1e-15);
        let err = grad_check(&[Matrix::scalar(1.0)], 1e-5, |t, v| {
            let s = t.silu(v[0]);
            Ok(t.sum(s))
        })
        .unwrap();
        assert!(err < 1e-6);
    }

    fn every_op_loss(t: &mut Tape<f64>, v: &[Var]) -> Result<Var> {
        let h = t.linear(v[0], v[1], v[2], FlopKind::Projection)?;
        let a = t.silu(h);
        let ln = t.layer_norm(a, 1e-5);
        let g = t.gelu(ln);
        let prod = t.mul(g, a)?;
        let s = t.scale(prod, 0.7);
        let left = t.slice_cols(s, 0, 2);
        let right = t.slice_cols(s, 2, 2);
        let cat = t.concat_rows(&[left, right])?;
        let scores = t.matmul_bt(cat, cat, FlopKind::Attention)?;
        let mask = Arc::new(Mask::causal(6));
        let ms = t.masked_silu(scores, mask.clone(), vec![0.5; 6])?;
        let idx = (0..36).map(|k| if k % 5 == 0 { None } else { Some(k % 7) }).collect();
        let rab = t.gather_scalars(v[3], idx, 6, 6)?;
        let sc = t.add(ms, rab)?;
        let p = t.masked_softmax(sc, mask)?;
        let pooled = t.matmul(p, cat, FlopKind::Attention)?;
        let top = t.slice_rows(pooled, 0, 3);
        let wide = t.concat_cols(&[top, left])?;
        let gathered = t.gather_rows(wide, vec![0, 2, 2, 1])?;
        let xent = t.softmax_cross_entropy(gathered, vec![1, 0, 3, 2])?;
        let dots = t.row_dot(left, right, FlopKind::Other)?;
        let dots = t.scale_rows(dots, dots, FlopKind::Other)?;
        let labels = Matrix::new(3, 1, vec![1.0, 0.0, 1.0])?;
        let bce = t.bce_with_logits(dots, labels, vec![2.0])?;
        let total = t.add(xent, bce)?;
        let rest = t.sum(h);
        let rest = t.scale(rest, 0.01);
        t.add(total, rest)
    }

    #[test]
    fn every_op_passes() {
        let params = vec![m(3, 4, 1), m(4, 4, 2), m(1, 4, 3), m(1, 7, 4)];
        let err = grad_check(&params, 1e-6, every_op_loss).unwrap();
        assert!(err < 1e-6, "max relative gradient error {err}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn every_op_passes_at_random_points(seed in 0u64..1_000_000) {
            let params = vec![m(3, 4, seed), m(4, 4, seed + 1), m(1, 4, seed + 2), m(1, 7, seed + 3)];
            let err = grad_check(&params, 1e-5, every_op_loss).unwrap();
            proptest::prop_assert!(err < 1e-4, "max relative gradient error {}", err);
        }
    }

    #[test]
    fn non_finite_objective_is_an_error() {
        let params = vec![Matrix::scalar(1.0)];
        let r = grad_check(&params, 1e-6, |t, v| Ok(t.scale(v[0], f64::INFINITY)));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
